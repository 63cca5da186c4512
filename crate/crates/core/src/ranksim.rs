//! In-process simulation of data-parallel collectives.
//!
//! Ranks are threads sharing one [`RankGroup`]. Every collective is matched by
//! call order: the k-th collective of each rank joins round k, completes once
//! all ranks have contributed, and combines contributions in rank order.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Outer,
    Inner,
}

type Payload = Arc<dyn Any + Send + Sync>;

struct Round {
    kind: &'static str,
    slots: Vec<Option<Payload>>,
    readers: usize,
}

struct State {
    phases: Vec<Phase>,
    calls: Vec<u64>,
    rounds: HashMap<u64, Round>,
    poison: Option<(bool, String)>,
    transcript: Vec<Vec<&'static str>>,
}

struct Shared {
    world: usize,
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Clone)]
pub struct RankGroup {
    shared: Arc<Shared>,
}

impl RankGroup {
    pub fn new(world_size: usize) -> Result<Self> {
        if world_size == 0 {
            return Err(Error::config("ranksim.world_size", "must be positive"));
        }
        Ok(Self {
            shared: Arc::new(Shared {
                world: world_size,
                state: Mutex::new(State {
                    phases: vec![Phase::Outer; world_size],
                    calls: vec![0; world_size],
                    rounds: HashMap::new(),
                    poison: None,
                    transcript: vec![Vec::new(); world_size],
                }),
                cv: Condvar::new(),
            }),
        })
    }

    pub fn world_size(&self) -> usize {
        self.shared.world
    }

    /// Runs `f(rank, group)` on one thread per rank and returns results in rank order.
    pub fn run<T: Send>(
        world_size: usize,
        f: impl Fn(usize, &RankGroup) -> Result<T> + Sync,
    ) -> Result<Vec<Result<T>>> {
        let group = Self::new(world_size)?;
        let f = &f;
        let group_ref = &group;
        Ok(std::thread::scope(|s| {
            let handles: Vec<_> = (0..world_size)
                .map(|r| {
                    s.spawn(move || {
                        let out = f(r, group_ref);
                        if let Err(e) = &out {
                            group_ref.poison(false, format!("rank {r} failed: {e}"));
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Contract("rank thread panicked".into())))
                })
                .collect()
        }))
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn poison(&self, phase: bool, msg: String) {
        let mut st = self.lock();
        if st.poison.is_none() {
            st.poison = Some((phase, msg));
        }
        drop(st);
        self.shared.cv.notify_all();
    }

    fn poisoned_error(p: &(bool, String)) -> Error {
        if p.0 {
            Error::PhaseViolation(p.1.clone())
        } else {
            Error::Contract(format!("rank group aborted: {}", p.1))
        }
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.shared.world {
            return Err(Error::Contract(format!(
                "rank {rank} outside world of {}",
                self.shared.world
            )));
        }
        Ok(())
    }

    /// Deposits `value` for this rank's next round and returns every rank's value.
    fn exchange<T: Any + Clone + Send + Sync>(
        &self,
        rank: usize,
        kind: &'static str,
        value: T,
    ) -> Result<Vec<T>> {
        self.check_rank(rank)?;
        let world = self.shared.world;
        let mut st = self.lock();
        if let Some(p) = &st.poison {
            return Err(Self::poisoned_error(p));
        }
        if kind == "all_reduce_mean" {
            if let Some(r) = st.phases.iter().position(|p| *p == Phase::Inner) {
                let msg = format!(
                    "all_reduce issued by rank {rank} while rank {r} is inside its inner loop"
                );
                st.poison = Some((true, msg.clone()));
                drop(st);
                self.shared.cv.notify_all();
                return Err(Error::PhaseViolation(msg));
            }
        }
        let id = st.calls[rank];
        st.calls[rank] += 1;
        st.transcript[rank].push(kind);
        let round = st.rounds.entry(id).or_insert_with(|| Round {
            kind,
            slots: vec![None; world],
            readers: 0,
        });
        if round.kind != kind {
            let msg = format!(
                "rank {rank} issued {kind} while round {id} is {}",
                round.kind
            );
            st.poison = Some((false, msg.clone()));
            drop(st);
            self.shared.cv.notify_all();
            return Err(Error::Contract(msg));
        }
        round.slots[rank] = Some(Arc::new(value));
        if round.slots.iter().all(Option::is_some) {
            self.shared.cv.notify_all();
        }
        loop {
            if let Some(p) = &st.poison {
                return Err(Self::poisoned_error(p));
            }
            let round = st
                .rounds
                .get(&id)
                .expect("round alive until all ranks read it");
            if round.slots.iter().all(Option::is_some) {
                break;
            }
            st = self.shared.cv.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        let round = st.rounds.get_mut(&id).expect("round present");
        let values = round
            .slots
            .iter()
            .map(|s| {
                s.as_ref()
                    .and_then(|p| p.downcast_ref::<T>())
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("mismatched payload types in {kind}")))
            })
            .collect::<Result<Vec<T>>>();
        round.readers += 1;
        if round.readers == world {
            st.rounds.remove(&id);
        }
        values
    }

    /// Concatenates every rank's rows in rank order.
    pub fn all_gather(&self, rank: usize, local: &Matrix) -> Result<Matrix> {
        let parts = self.exchange(rank, "all_gather", local.clone())?;
        let shape = parts[0].shape();
        if let Some(r) = parts.iter().position(|p| p.shape() != shape) {
            return Err(Error::Contract(format!(
                "all_gather shape mismatch: rank 0 {shape:?}, rank {r} {:?}",
                parts[r].shape()
            )));
        }
        Matrix::vstack(&parts.iter().collect::<Vec<_>>())
    }

    /// Every rank receives `src`'s value; other ranks' arguments are ignored.
    pub fn broadcast<T: Any + Clone + Send + Sync>(
        &self,
        rank: usize,
        src: usize,
        value: T,
    ) -> Result<T> {
        self.check_rank(src)?;
        let mut all = self.exchange(rank, "broadcast", value)?;
        Ok(all.swap_remove(src))
    }

    /// Rank-order mean of gradient maps. Only legal in the outer phase.
    pub fn all_reduce_mean(
        &self,
        rank: usize,
        local: &BTreeMap<String, Matrix>,
    ) -> Result<BTreeMap<String, Matrix>> {
        let parts = self.exchange(rank, "all_reduce_mean", local.clone())?;
        let keys: Vec<&String> = parts[0].keys().collect();
        if parts.iter().any(|p| p.keys().collect::<Vec<_>>() != keys) {
            return Err(Error::Contract(
                "all_reduce over differing parameter sets".into(),
            ));
        }
        let inv = 1.0 / parts.len() as f64;
        let mut out = BTreeMap::new();
        for k in keys {
            let mut acc = parts[0][k].clone();
            for p in &parts[1..] {
                if p[k].shape() != acc.shape() {
                    return Err(Error::Contract(format!(
                        "all_reduce shape mismatch for {k}"
                    )));
                }
                acc.add_assign(&p[k])?;
            }
            acc.scale(inv);
            out.insert(k.clone(), acc);
        }
        Ok(out)
    }

    pub fn barrier(&self, rank: usize) -> Result<()> {
        self.exchange(rank, "barrier", ()).map(|_| ())
    }

    /// Marks this rank as adapting and waits for all ranks to do the same.
    pub fn enter_inner(&self, rank: usize) -> Result<()> {
        self.check_rank(rank)?;
        self.lock().phases[rank] = Phase::Inner;
        self.exchange(rank, "enter_inner", ()).map(|_| ())
    }

    /// Lockstep point after each inner step.
    pub fn inner_step_barrier(&self, rank: usize) -> Result<()> {
        self.exchange(rank, "inner_step", ()).map(|_| ())
    }

    /// Barrier separating the inner and outer phases.
    pub fn exit_inner(&self, rank: usize) -> Result<()> {
        self.check_rank(rank)?;
        self.lock().phases[rank] = Phase::Outer;
        self.exchange(rank, "exit_inner", ()).map(|_| ())
    }

    pub fn phase(&self, rank: usize) -> Phase {
        self.lock().phases[rank]
    }

    /// Ordered collective names issued by `rank`.
    pub fn transcript(&self, rank: usize) -> Vec<&'static str> {
        self.lock().transcript[rank].clone()
    }
}

/// A rank's handle on its group.
#[derive(Clone)]
pub struct Comm {
    pub group: RankGroup,
    pub rank: usize,
}

impl Comm {
    pub fn solo() -> Self {
        Self {
            group: RankGroup::new(1).expect("world of one"),
            rank: 0,
        }
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn world_size(&self) -> usize {
        self.group.world_size()
    }
}
