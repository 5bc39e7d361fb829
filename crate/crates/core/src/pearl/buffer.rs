use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Transition;
use crate::error::{Error, Result};

/// Replay storage for one task: a FIFO ring of everything collected plus a
/// window holding the latest collection round. The window never exceeds
/// the ring capacity, so it is always a suffix of the ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBuffer {
    task_id: u64,
    capacity: usize,
    window: usize,
    all: VecDeque<Transition>,
    recent: VecDeque<Transition>,
}

/// Transitions drawn from one task's buffer, tagged with that task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample<'a> {
    pub task_id: u64,
    pub transitions: Vec<&'a Transition>,
}

impl TaskBuffer {
    pub fn new(task_id: u64, capacity: usize, window: usize) -> Result<Self> {
        if capacity == 0 || window == 0 {
            return Err(Error::Config("buffer capacity and recent window must be positive".into()));
        }
        Ok(TaskBuffer {
            task_id,
            capacity,
            window: window.min(capacity),
            all: VecDeque::new(),
            recent: VecDeque::new(),
        })
    }

    pub fn task_id(&self) -> u64 {
        self.task_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.all.len()
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    pub fn recent_len(&self) -> usize {
        self.recent.len()
    }

    pub fn all(&self) -> impl Iterator<Item = &Transition> {
        self.all.iter()
    }

    pub fn recent(&self) -> impl Iterator<Item = &Transition> {
        self.recent.iter()
    }

    /// Starts a collection round: the recent window is emptied.
    pub fn begin_round(&mut self) {
        self.recent.clear();
    }

    pub fn push(&mut self, t: Transition) {
        if self.all.len() == self.capacity {
            self.all.pop_front();
        }
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(t.clone());
        self.all.push_back(t);
    }

    /// `n` transitions drawn uniformly with replacement from the whole buffer.
    pub fn sample_all<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TaskSample<'_>> {
        if self.all.is_empty() {
            return Err(Error::NotReady(format!("task {} has no transitions", self.task_id)));
        }
        let transitions = (0..n).map(|_| &self.all[rng.random_range(0..self.all.len())]).collect();
        Ok(TaskSample {
            task_id: self.task_id,
            transitions,
        })
    }

    /// `n` distinct transitions from the recent window.
    pub fn sample_recent<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<TaskSample<'_>> {
        if self.recent.len() < n {
            return Err(Error::NotReady(format!(
                "task {} has {} recent transitions, {n} needed",
                self.task_id,
                self.recent.len()
            )));
        }
        let transitions = index::sample(rng, self.recent.len(), n)
            .into_iter()
            .map(|i| &self.recent[i])
            .collect();
        Ok(TaskSample {
            task_id: self.task_id,
            transitions,
        })
    }

    /// `n` distinct transitions from the whole buffer, or all of them if
    /// fewer are stored.
    pub fn sample_context<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> TaskSample<'_> {
        let take = n.min(self.all.len());
        let transitions = index::sample(rng, self.all.len(), take)
            .into_iter()
            .map(|i| &self.all[i])
            .collect();
        TaskSample {
            task_id: self.task_id,
            transitions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            s: vec![i as f64],
            a: vec![0.0],
            r: i as f64,
            s_next: vec![i as f64 + 1.0],
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = TaskBuffer::new(3, 4, 2).unwrap();
        for i in 0..6 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.all().map(|x| x.r).collect::<Vec<_>>(), vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b.recent().map(|x| x.r).collect::<Vec<_>>(), vec![4.0, 5.0]);
        b.begin_round();
        assert_eq!(b.recent_len(), 0);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn samples_carry_task_id_and_respect_readiness() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = TaskBuffer::new(7, 100, 10).unwrap();
        assert!(matches!(b.sample_all(3, &mut rng), Err(Error::NotReady(_))));
        assert!(b.sample_context(5, &mut rng).transitions.is_empty());
        for i in 0..5 {
            b.push(t(i));
        }
        assert!(matches!(b.sample_recent(6, &mut rng), Err(Error::NotReady(_))));
        let s = b.sample_recent(5, &mut rng).unwrap();
        assert_eq!(s.task_id, 7);
        let mut rs: Vec<f64> = s.transitions.iter().map(|x| x.r).collect();
        rs.sort_by(f64::total_cmp);
        assert_eq!(rs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(b.sample_all(20, &mut rng).unwrap().transitions.len(), 20);
    }

    proptest! {
        #[test]
        fn sizes_stay_bounded(cap in 1usize..20, window in 1usize..20, rounds in proptest::collection::vec(0usize..30, 1..6)) {
            let mut b = TaskBuffer::new(0, cap, window).unwrap();
            let mut k = 0;
            for n in rounds {
                b.begin_round();
                for _ in 0..n {
                    b.push(t(k));
                    k += 1;
                }
                prop_assert!(b.len() <= cap);
                prop_assert_eq!(b.recent_len(), n.min(window).min(cap));
                let all: Vec<f64> = b.all().map(|x| x.r).collect();
                let recent: Vec<f64> = b.recent().map(|x| x.r).collect();
                prop_assert_eq!(&all[all.len() - recent.len()..], recent.as_slice());
            }
        }
    }
}
