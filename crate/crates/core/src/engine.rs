//! The cycle loop: component scheduling, progress tracking, deadlock
//! reporting.
//!
//! A [`Simulation`] owns the fabric, the accelerator endpoints, and one
//! switch-side device per switch (the ISA for offloaded collectives, a
//! multicast reduce/broadcast engine for the accelerator-initiated
//! baseline, or nothing for pure endpoint-to-endpoint traffic). Collective
//! drivers participate as [`Agent`]s stepped once per cycle.
//!
//! Per-cycle order: channel deliveries first, then endpoint protocol
//! handling, then switch devices, then agents, then switch-core forwarding
//! and transmit arbitration. Every component reports whether it did
//! anything; a configurable stretch of completely idle cycles with agents
//! still pending is reported as a deadlock with a full queue inventory.

use crate::config::SimConfig;
use crate::endpoint::Endpoint;
use crate::error::SimError;
use crate::fabric::Fabric;
use crate::isa::{InstrTimeline, Isa};

/// Switch-side device: consumes the switch's ISA-set queues.
pub trait SwitchDevice {
    fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError>;
    fn is_idle(&self) -> bool;
    /// Activation/retirement cycles of the instructions this device ran,
    /// for devices that execute instructions. Empty otherwise.
    fn timeline(&self) -> Vec<InstrTimeline> {
        Vec::new()
    }
}

impl SwitchDevice for Isa {
    fn step(&mut self, now: u64, fabric: &mut Fabric) -> Result<bool, SimError> {
        Isa::step(self, now, fabric)
    }
    fn is_idle(&self) -> bool {
        Isa::is_idle(self)
    }
    fn timeline(&self) -> Vec<InstrTimeline> {
        self.timeline.clone()
    }
}

/// A no-op switch device for runs where switches only forward.
pub struct InertSwitch;

impl SwitchDevice for InertSwitch {
    fn step(&mut self, _now: u64, _fabric: &mut Fabric) -> Result<bool, SimError> {
        Ok(false)
    }
    fn is_idle(&self) -> bool {
        true
    }
}

/// A collective driver running on (conceptually, inside) an accelerator.
pub trait Agent {
    fn step(
        &mut self,
        now: u64,
        fabric: &mut Fabric,
        endpoints: &mut [Endpoint],
    ) -> Result<bool, SimError>;
    fn done(&self) -> bool;
}

pub struct Simulation {
    pub config: SimConfig,
    pub fabric: Fabric,
    pub endpoints: Vec<Endpoint>,
    pub switches: Vec<Box<dyn SwitchDevice>>,
    pub now: u64,
    /// Cycle at which the last agent reported done.
    pub finished_at: Option<u64>,
}

impl Simulation {
    /// Build a simulation with the given switch devices (one per switch).
    pub fn new(
        config: &SimConfig,
        switches: Vec<Box<dyn SwitchDevice>>,
    ) -> Result<Simulation, SimError> {
        config.validate()?;
        assert_eq!(switches.len(), config.num_switches);
        Ok(Simulation {
            config: config.clone(),
            fabric: Fabric::new(config),
            endpoints: (0..config.num_accelerators)
                .map(|a| Endpoint::new(a, config))
                .collect(),
            switches,
            now: 0,
            finished_at: None,
        })
    }

    /// One cycle. Returns whether any component made progress.
    pub fn step(&mut self, agents: &mut [Box<dyn Agent>]) -> Result<bool, SimError> {
        let now = self.now;
        let mut activity = self.fabric.deliver(now);
        for ep in &mut self.endpoints {
            activity |= ep.step(now, &mut self.fabric)?;
        }
        for sw in &mut self.switches {
            activity |= sw.step(now, &mut self.fabric)?;
        }
        for agent in agents.iter_mut() {
            activity |= agent.step(now, &mut self.fabric, &mut self.endpoints)?;
        }
        activity |= self.fabric.forward(now);
        activity |= self.fabric.pump(now);
        self.now += 1;
        Ok(activity)
    }

    /// Run until every agent is done and the system has drained, with a
    /// no-progress watchdog. Returns the cycle the last agent finished.
    pub fn run(&mut self, agents: &mut [Box<dyn Agent>]) -> Result<u64, SimError> {
        let timeout = self.config.deadlock_timeout_cycles;
        let mut idle_cycles = 0u64;
        loop {
            let activity = self.step(agents)?;
            if activity {
                idle_cycles = 0;
            } else {
                idle_cycles += 1;
            }
            if self.finished_at.is_none() && agents.iter().all(|a| a.done()) {
                // `step` advanced the clock past the finishing cycle.
                self.finished_at = Some(self.now - 1);
            }
            if self.finished_at.is_some() && self.is_drained() {
                return Ok(self.finished_at.unwrap());
            }
            if idle_cycles >= timeout {
                return Err(SimError::Deadlock {
                    cycle: self.now,
                    cycles_without_progress: idle_cycles,
                    inventory: format!(
                        "{}; agents done: {}/{}; switches idle: {}/{}",
                        self.fabric.inventory(),
                        agents.iter().filter(|a| a.done()).count(),
                        agents.len(),
                        self.switches.iter().filter(|s| s.is_idle()).count(),
                        self.switches.len(),
                    ),
                });
            }
        }
    }

    /// Everything delivered, consumed, and retired.
    pub fn is_drained(&self) -> bool {
        self.fabric.is_quiescent()
            && self.switches.iter().all(|s| s.is_idle())
            && self.endpoints.iter().all(Endpoint::dma_idle)
    }

    pub fn elapsed_ps(&self, cycles: u64) -> u64 {
        crate::units::cycles_to_ps(cycles, self.config.clock_period_ps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::packet::{NodeId, Packet, PacketHeader, PacketKind};

    /// Writes one packet to a peer at a fixed cycle, then waits for the ack.
    struct OneShotWriter {
        from: usize,
        to: usize,
        at: u64,
        sent: bool,
        acked: bool,
    }

    impl Agent for OneShotWriter {
        fn step(
            &mut self,
            now: u64,
            fabric: &mut Fabric,
            endpoints: &mut [Endpoint],
        ) -> Result<bool, SimError> {
            if !self.sent && now >= self.at {
                self.sent = true;
                fabric.acc_enqueue(
                    self.from,
                    0,
                    Packet::new(PacketHeader {
                        kind: PacketKind::WriteReq,
                        inc_flag: false,
                        src: NodeId::Accelerator(self.from as u16),
                        dst: NodeId::Accelerator(self.to as u16),
                        address: 0,
                        length: 0,
                        tag: 77,
                        imm: 0,
                    }),
                );
                return Ok(true);
            }
            if self.sent && !self.acked {
                let inbox = &mut endpoints[self.from].inbox;
                if let Some(pos) = inbox
                    .iter()
                    .position(|p| p.header.kind == PacketKind::WriteResp && p.header.tag == 77)
                {
                    inbox.remove(pos);
                    self.acked = true;
                    return Ok(true);
                }
            }
            Ok(false)
        }
        fn done(&self) -> bool {
            self.acked
        }
    }

    fn two_acc_config() -> SimConfig {
        let mut cfg = SimConfig::switch_class_8();
        cfg.num_accelerators = 2;
        cfg.num_switches = 1;
        cfg
    }

    #[test]
    fn round_trip_time_is_exact() {
        let cfg = two_acc_config();
        let mut sim = Simulation::new(&cfg, vec![Box::new(InertSwitch)]).unwrap();
        let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(OneShotWriter {
            from: 0,
            to: 1,
            at: 0,
            sent: false,
            acked: false,
        })];
        let finished = sim.run(&mut agents).unwrap();
        // Single-flit write: L up, forwarded same cycle, L down, ack posted
        // the same cycle it lands, L + L back.
        assert_eq!(finished, 4 * cfg.link_latency_cycles());
        assert!(sim.is_drained());
    }

    #[test]
    fn watchdog_reports_deadlock_with_inventory() {
        struct Stuck;
        impl Agent for Stuck {
            fn step(
                &mut self,
                _now: u64,
                _fabric: &mut Fabric,
                _endpoints: &mut [Endpoint],
            ) -> Result<bool, SimError> {
                Ok(false)
            }
            fn done(&self) -> bool {
                false
            }
        }
        let mut cfg = two_acc_config();
        cfg.deadlock_timeout_cycles = 500;
        let mut sim = Simulation::new(&cfg, vec![Box::new(InertSwitch)]).unwrap();
        let mut agents: Vec<Box<dyn Agent>> = vec![Box::new(Stuck)];
        let err = sim.run(&mut agents).unwrap_err();
        match err {
            SimError::Deadlock {
                cycles_without_progress,
                ref inventory,
                ..
            } => {
                assert_eq!(cycles_without_progress, 500);
                assert!(inventory.contains("agents done: 0/1"), "{inventory}");
            }
            other => panic!("expected deadlock, got {other}"),
        }
    }
}
