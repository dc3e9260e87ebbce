use std::io::{Read, Write};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{expect_header, read_f64, read_f64s, read_len, read_u64, write_f64, write_f64s, write_header, write_u64};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SGRB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Squashed continuous action.
    pub a: Vec<f64>,
    pub a_discrete: Vec<usize>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.s.iter().chain(&self.a).chain(&self.s_next).all(|x| x.is_finite())
    }
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Rejects transitions with non-finite entries.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::invalid("transition", "contains non-finite values"));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, MAGIC, VERSION)?;
        write_u64(&mut w, self.capacity as u64)?;
        write_u64(&mut w, self.next as u64)?;
        write_u64(&mut w, self.items.len() as u64)?;
        for t in &self.items {
            write_f64s(&mut w, &t.s)?;
            write_f64s(&mut w, &t.a)?;
            write_u64(&mut w, t.a_discrete.len() as u64)?;
            for &d in &t.a_discrete {
                write_u64(&mut w, d as u64)?;
            }
            write_f64(&mut w, t.r)?;
            write_f64s(&mut w, &t.s_next)?;
            write_u64(&mut w, t.done as u64)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        expect_header(&mut r, MAGIC, VERSION, "replay buffer")?;
        let capacity = read_len(&mut r)?;
        let next = read_len(&mut r)?;
        let n = read_len(&mut r)?;
        if capacity == 0 || n > capacity || next >= capacity {
            return Err(Error::Format("inconsistent replay buffer header".into()));
        }
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let s = read_f64s(&mut r)?;
            let a = read_f64s(&mut r)?;
            let d = read_len(&mut r)?;
            let a_discrete = (0..d).map(|_| read_u64(&mut r).map(|x| x as usize)).collect::<Result<_>>()?;
            let reward = read_f64(&mut r)?;
            let s_next = read_f64s(&mut r)?;
            let done = read_u64(&mut r)? != 0;
            items.push(Transition { s, a, a_discrete, r: reward, s_next, done });
        }
        Ok(Self { capacity, items, next })
    }
}

/// Buffer shared between collectors and a learner; every append and sample
/// holds the lock for its whole duration.
#[derive(Debug)]
pub struct SharedReplayBuffer {
    inner: Mutex<ReplayBuffer>,
}

impl SharedReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { inner: Mutex::new(ReplayBuffer::new(capacity)) }
    }

    pub fn push(&self, t: Transition) -> Result<()> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).push(t)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cloned draws, so the lock is released before the caller uses them.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        let guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        guard.sample(n, rng).into_iter().cloned().collect()
    }

    pub fn into_inner(self) -> ReplayBuffer {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}
