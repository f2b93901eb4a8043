//! Self-timed handshake timing.
//!
//! Each link between a producer and a consumer carries four signals:
//! `ready` (the producer's output register holds a result), `ready_in` (the
//! consumer is idle and accepts this payload), `fetch` (a transfer is in
//! progress) and `fetched` (the transfer completed this cycle, freeing the
//! producer's register). A transfer costs a fixed number of handshake cycles
//! paid by the consumer before it computes. Blocks are stepped once per
//! cycle from the sink back to the source, so a register freed in a cycle
//! can be refilled in the same cycle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{cycles_to_micros, PipeError};

/// The delay reported for the hardware prototype.
pub const TARGET_DELAY_CYCLES: u64 = 42;

/// Timing view of one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub name: String,
    pub compute_cycles: u64,
    /// `(channels, len)` the block fetches.
    pub accepts: (usize, usize),
    /// `(channels, len)` the block offers downstream.
    pub emits: (usize, usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandshakeState {
    pub ready: bool,
    pub ready_in: bool,
    pub fetch: bool,
    pub fetched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub block: String,
    pub compute_cycles: u64,
    pub handshake_cycles: u64,
    pub start_cycle: u64,
    pub end_cycle: u64,
}

/// Per-block timing of the first item and pipeline totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub blocks: Vec<BlockTrace>,
    /// First item from the start of the source to the end of the sink.
    pub latency_cycles: u64,
    /// Steady-state spacing between consecutive results at the sink.
    pub initiation_interval_cycles: u64,
    pub handshake_cycles: u64,
    pub items: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    latency_cycles: u64,
    initiation_interval: u64,
    handshake_cycles: u64,
    frequency_hz: f64,
    time_at_frequency_us: f64,
    latency_time_us: f64,
    config_hash: Option<&'a str>,
}

impl CycleTrace {
    /// CSV with columns block, compute_cycles, handshake_cycles, start, end.
    pub fn write_csv<W: Write>(&self, comment: Option<&str>, mut out: W) -> Result<(), PipeError> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "block",
            "compute_cycles",
            "handshake_cycles",
            "start",
            "end",
        ])?;
        for b in &self.blocks {
            w.write_record([
                b.block.clone(),
                b.compute_cycles.to_string(),
                b.handshake_cycles.to_string(),
                b.start_cycle.to_string(),
                b.end_cycle.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON summary; the delay at `frequency_hz` uses the initiation
    /// interval.
    pub fn summary_json(
        &self,
        frequency_hz: f64,
        config_hash: Option<&str>,
    ) -> Result<String, PipeError> {
        let s = Summary {
            latency_cycles: self.latency_cycles,
            initiation_interval: self.initiation_interval_cycles,
            handshake_cycles: self.handshake_cycles,
            frequency_hz,
            time_at_frequency_us: cycles_to_micros(self.initiation_interval_cycles, frequency_hz)?,
            latency_time_us: cycles_to_micros(self.latency_cycles, frequency_hz)?,
            config_hash,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Fetch(u64),
    Compute(u64),
    Hold,
}

/// Simulates `items` inputs flowing through `blocks` (source first, sink
/// last) with `handshake_cycles` per transfer.
pub fn simulate_timing(
    blocks: &[TimingBlock],
    handshake_cycles: u64,
    items: usize,
) -> Result<CycleTrace, PipeError> {
    if blocks.is_empty() || items == 0 {
        return Err(PipeError::Shape(
            "timing needs at least one block and one item".into(),
        ));
    }
    if let Some(b) = blocks.iter().find(|b| b.compute_cycles == 0) {
        return Err(PipeError::Config {
            block: b.name.clone(),
            detail: "compute cycles must be positive".into(),
        });
    }
    let n = blocks.len();
    let last = n - 1;
    let mut state = vec![State::Idle; n];
    let mut out_full = vec![false; n];
    let mut started = vec![0usize; n];
    let mut first = vec![None::<(u64, u64)>; n];
    let mut sink_done = Vec::with_capacity(items);
    let compatible = |i: usize| blocks[i - 1].emits == blocks[i].accepts;
    let limit = 1_000
        + (items as u64 + n as u64)
            * blocks
                .iter()
                .map(|b| b.compute_cycles + handshake_cycles + 1)
                .sum::<u64>();

    let mut cycle = 0u64;
    while sink_done.len() < items {
        if cycle > limit {
            return Err(deadlock(blocks, &state, &out_full, cycle, handshake_cycles));
        }
        let mut progressed = false;
        for i in (0..n).rev() {
            if state[i] == State::Idle && started[i] < items {
                let go = if i == 0 {
                    true
                } else {
                    out_full[i - 1] && compatible(i)
                };
                if go {
                    started[i] += 1;
                    if started[i] == 1 {
                        first[i] = Some((cycle, 0));
                    }
                    state[i] = if i > 0 && handshake_cycles > 0 {
                        State::Fetch(handshake_cycles)
                    } else {
                        if i > 0 {
                            out_full[i - 1] = false;
                        }
                        State::Compute(blocks[i].compute_cycles)
                    };
                }
            }
            match state[i] {
                State::Fetch(left) => {
                    progressed = true;
                    state[i] = if left == 1 {
                        out_full[i - 1] = false;
                        State::Compute(blocks[i].compute_cycles)
                    } else {
                        State::Fetch(left - 1)
                    };
                }
                State::Compute(left) => {
                    progressed = true;
                    if left == 1 {
                        if started[i] == 1 {
                            if let Some((s, _)) = first[i] {
                                first[i] = Some((s, cycle + 1));
                            }
                        }
                        if i == last {
                            sink_done.push(cycle + 1);
                            state[i] = State::Idle;
                        } else {
                            state[i] = State::Hold;
                        }
                    } else {
                        state[i] = State::Compute(left - 1);
                    }
                }
                _ => {}
            }
            if state[i] == State::Hold && !out_full[i] {
                out_full[i] = true;
                state[i] = State::Idle;
                progressed = true;
            }
        }
        cycle += 1;
        if !progressed && sink_done.len() < items {
            return Err(deadlock(blocks, &state, &out_full, cycle, handshake_cycles));
        }
    }

    let trace_blocks = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let (start, end) = first[i].expect("every block handled the first item");
            BlockTrace {
                block: b.name.clone(),
                compute_cycles: b.compute_cycles,
                handshake_cycles: if i == 0 { 0 } else { handshake_cycles },
                start_cycle: start,
                end_cycle: end,
            }
        })
        .collect::<Vec<_>>();
    let latency = sink_done[0] - trace_blocks[0].start_cycle;
    let ii = if items >= 2 {
        sink_done[items - 1] - sink_done[items - 2]
    } else {
        latency
    };
    Ok(CycleTrace {
        blocks: trace_blocks,
        latency_cycles: latency,
        initiation_interval_cycles: ii,
        handshake_cycles,
        items,
    })
}

fn deadlock(
    blocks: &[TimingBlock],
    state: &[State],
    out_full: &[bool],
    cycle: u64,
    h: u64,
) -> PipeError {
    // a shape mismatch is the root cause; upstream links merely back up behind it
    let mut links: Vec<usize> = (1..blocks.len()).collect();
    links.sort_by_key(|&i| blocks[i - 1].emits == blocks[i].accepts);
    for i in links {
        let hs = HandshakeState {
            ready: out_full[i - 1],
            ready_in: state[i] == State::Idle && blocks[i - 1].emits == blocks[i].accepts,
            fetch: matches!(state[i], State::Fetch(_)),
            fetched: false,
        };
        if hs.ready && !hs.ready_in && !hs.fetch {
            return PipeError::Deadlock {
                cycle,
                link: format!("{} -> {}", blocks[i - 1].name, blocks[i].name),
                detail: format!(
                    "ready asserted but fetch never raised: {:?} offered, {:?} expected ({hs:?}, {h} handshake cycles)",
                    blocks[i - 1].emits, blocks[i].accepts
                ),
            };
        }
    }
    PipeError::Deadlock {
        cycle,
        link: "none".into(),
        detail: "no block can progress".into(),
    }
}

/// Smallest handshake cost whose initiation interval equals `target`, or
/// `None` when no cost in `0..=target` hits it exactly.
pub fn calibrate_handshake(blocks: &[TimingBlock], target: u64) -> Result<Option<u64>, PipeError> {
    for h in 0..=target {
        if simulate_timing(blocks, h, 4)?.initiation_interval_cycles == target {
            return Ok(Some(h));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(computes: &[u64]) -> Vec<TimingBlock> {
        computes
            .iter()
            .enumerate()
            .map(|(i, &c)| TimingBlock {
                name: format!("b{i}"),
                compute_cycles: c,
                accepts: (1, 1),
                emits: (1, 1),
            })
            .collect()
    }

    #[test]
    fn interval_is_slowest_stage_plus_handshake() {
        let b = chain(&[1, 33, 20, 32, 11, 30, 25, 6, 2]);
        for h in [0, 2, 9] {
            let t = simulate_timing(&b, h, 5).unwrap();
            assert_eq!(t.initiation_interval_cycles, 33 + h);
            let sum: u64 = b.iter().map(|x| x.compute_cycles).sum::<u64>() + 8 * h;
            assert_eq!(t.latency_cycles, sum);
            for bt in &t.blocks {
                assert_eq!(
                    bt.end_cycle - bt.start_cycle,
                    bt.compute_cycles + bt.handshake_cycles
                );
            }
        }
        assert_eq!(calibrate_handshake(&b, 42).unwrap(), Some(9));
    }

    #[test]
    fn mismatched_payload_deadlocks_on_that_link() {
        let mut b = chain(&[1, 4, 4]);
        b[2].accepts = (1, 2);
        match simulate_timing(&b, 2, 2) {
            Err(PipeError::Deadlock { link, .. }) => assert_eq!(link, "b1 -> b2"),
            other => panic!("{other:?}"),
        }
    }
}
