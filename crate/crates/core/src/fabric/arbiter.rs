//! Transmit arbitration between the ISA and switch-core sources sharing a
//! downstream channel.
//!
//! Deficit round-robin in flit units at packet granularity: a packet's
//! flits are never interleaved with another packet's, and when both sources
//! stay backlogged the grant sequence equalizes flits sent — for equal-size
//! packets that is strict alternation, and over a 2n-cycle window each
//! source moves n flits (±one packet). Ties (equal flit counts) go to the
//! ISA on even grant epochs and to the switch core on odd ones.

/// Identifies the two competing sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxSource {
    Isa,
    Core,
}

#[derive(Debug, Default)]
pub struct DeficitRoundRobin {
    sent_flits: [u64; 2],
    epoch: u64,
}

impl DeficitRoundRobin {
    pub fn new() -> DeficitRoundRobin {
        DeficitRoundRobin::default()
    }

    /// Pick a source given which ones have a packet ready. Returns `None`
    /// when neither is ready. Call [`DeficitRoundRobin::granted`] with the
    /// packet's flit count after injecting.
    pub fn choose(&mut self, isa_ready: bool, core_ready: bool) -> Option<TxSource> {
        let pick = match (isa_ready, core_ready) {
            (false, false) => return None,
            (true, false) => TxSource::Isa,
            (false, true) => TxSource::Core,
            (true, true) => {
                use std::cmp::Ordering;
                match self.sent_flits[0].cmp(&self.sent_flits[1]) {
                    Ordering::Less => TxSource::Isa,
                    Ordering::Greater => TxSource::Core,
                    Ordering::Equal => {
                        if self.epoch % 2 == 0 {
                            TxSource::Isa
                        } else {
                            TxSource::Core
                        }
                    }
                }
            }
        };
        self.epoch += 1;
        Some(pick)
    }

    pub fn granted(&mut self, source: TxSource, flits: u64) {
        let idx = match source {
            TxSource::Isa => 0,
            TxSource::Core => 1,
        };
        self.sent_flits[idx] += flits;
        // Keep the counters small; only the difference matters.
        let min = self.sent_flits[0].min(self.sent_flits[1]);
        self.sent_flits[0] -= min;
        self.sent_flits[1] -= min;
    }
}
