//! Hardware model of the simulated SSD: flash geometry, the latency and
//! energy constant tables, and flash addressing.
//!
//! Times are integer nanoseconds and energies integer picojoules
//! throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulated time in nanoseconds.
pub type Nanos = u64;
/// Energy in picojoules.
pub type Picojoules = u64;

pub const KIB: u64 = 1024;

/// `ceil(bytes / bytes_per_sec)` expressed in nanoseconds.
pub fn transfer_time(bytes: u64, bytes_per_sec: u64) -> Nanos {
    let num = bytes as u128 * 1_000_000_000u128;
    let den = bytes_per_sec.max(1) as u128;
    num.div_ceil(den) as Nanos
}

/// Scales a per-KiB energy by a byte count (floor).
pub fn energy_per_kib(bytes: u64, pj_per_kib: Picojoules) -> Picojoules {
    (bytes as u128 * pj_per_kib as u128 / KIB as u128) as Picojoules
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsdTopology {
    pub channels: u32,
    pub dies_per_channel: u32,
    pub planes_per_die: u32,
    pub blocks_per_plane: u32,
    pub pages_per_block: u32,
    /// Bytes per flash page.
    pub page_size: u32,
    /// Bytes per second on one flash channel.
    pub channel_bandwidth: u64,
}

impl Default for SsdTopology {
    fn default() -> Self {
        Self {
            channels: 8,
            dies_per_channel: 8,
            planes_per_die: 2,
            blocks_per_plane: 2048,
            pages_per_block: 196,
            page_size: 4096,
            channel_bandwidth: 1_200_000_000,
        }
    }
}

impl SsdTopology {
    pub fn total_dies(&self) -> u32 {
        self.channels * self.dies_per_channel
    }

    pub fn total_planes(&self) -> u32 {
        self.total_dies() * self.planes_per_die
    }

    pub fn total_pages(&self) -> u64 {
        self.channels as u64
            * self.dies_per_channel as u64
            * self.planes_per_die as u64
            * self.blocks_per_plane as u64
            * self.pages_per_block as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_pages() * self.page_size as u64
    }

    pub fn page_bits(&self) -> u64 {
        self.page_size as u64 * 8
    }

    /// Linear index of a flash address; channel varies fastest so that
    /// consecutive indices stripe across channels, then dies, then planes.
    pub fn linear_page_index(&self, addr: FlashAddress) -> Result<u64> {
        self.check(addr)?;
        let (c, d, p) = (
            self.channels as u64,
            self.dies_per_channel as u64,
            self.planes_per_die as u64,
        );
        let ppb = self.pages_per_block as u64;
        let stripe = addr.channel as u64 + c * (addr.die as u64 + d * addr.plane as u64);
        let within_plane = addr.block as u64 * ppb + addr.page as u64;
        Ok(stripe + c * d * p * within_plane)
    }

    pub fn address_of(&self, index: u64) -> Result<FlashAddress> {
        if index >= self.total_pages() {
            return Err(Error::AddressOutOfBounds(format!(
                "linear index {index} >= {}",
                self.total_pages()
            )));
        }
        let (c, d, p) = (
            self.channels as u64,
            self.dies_per_channel as u64,
            self.planes_per_die as u64,
        );
        let ppb = self.pages_per_block as u64;
        let stripe = index % (c * d * p);
        let within_plane = index / (c * d * p);
        Ok(FlashAddress {
            channel: (stripe % c) as u32,
            die: ((stripe / c) % d) as u32,
            plane: (stripe / (c * d)) as u32,
            block: (within_plane / ppb) as u32,
            page: (within_plane % ppb) as u32,
        })
    }

    pub fn check(&self, addr: FlashAddress) -> Result<()> {
        let bounds = [
            ("channel", addr.channel, self.channels),
            ("die", addr.die, self.dies_per_channel),
            ("plane", addr.plane, self.planes_per_die),
            ("block", addr.block, self.blocks_per_plane),
            ("page", addr.page, self.pages_per_block),
        ];
        for (name, v, bound) in bounds {
            if v >= bound {
                return Err(Error::AddressOutOfBounds(format!("{name} {v} >= {bound}")));
            }
        }
        Ok(())
    }

    /// Flat die index `channel * dies_per_channel + die`.
    pub fn die_index(&self, addr: FlashAddress) -> usize {
        (addr.channel * self.dies_per_channel + addr.die) as usize
    }

    pub fn plane_index(&self, addr: FlashAddress) -> usize {
        self.die_index(addr) * self.planes_per_die as usize + addr.plane as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlashAddress {
    pub channel: u32,
    pub die: u32,
    pub plane: u32,
    pub block: u32,
    pub page: u32,
}

impl FlashAddress {
    pub fn same_die(&self, other: &FlashAddress) -> bool {
        self.channel == other.channel && self.die == other.die
    }

    pub fn same_plane(&self, other: &FlashAddress) -> bool {
        self.same_die(other) && self.plane == other.plane
    }

    pub fn same_block(&self, other: &FlashAddress) -> bool {
        self.same_plane(other) && self.block == other.block
    }
}

/// NAND timings in nanoseconds (SLC mode).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashTiming {
    pub t_read_slc: Nanos,
    pub t_prog_slc: Nanos,
    pub t_bers: Nanos,
    pub t_and_or: Nanos,
    pub t_xor: Nanos,
    pub t_latch_transfer: Nanos,
    pub t_dma: Nanos,
}

impl Default for FlashTiming {
    fn default() -> Self {
        Self {
            t_read_slc: 22_500,
            t_prog_slc: 400_000,
            t_bers: 3_500_000,
            t_and_or: 20,
            t_xor: 30,
            t_latch_transfer: 20,
            t_dma: 3_300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramConfig {
    pub capacity: u64,
    pub banks: u32,
    /// Bytes per DRAM row.
    pub row_size: u32,
    /// One bulk bitwise row operation.
    pub t_bbop: Nanos,
    /// Controller <-> DRAM bus, bytes per second. LPDDR4-1866 x16 assumed.
    pub bus_bandwidth: u64,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            capacity: 2 * 1024 * 1024 * 1024,
            banks: 8,
            row_size: 2048,
            t_bbop: 49,
            bus_bandwidth: 3_732_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreConfig {
    pub n_cores: u32,
    pub clock_hz: u64,
    /// SIMD register width in bits.
    pub simd_width: u32,
    /// Cores executing offloaded computation; the rest run FTL and offloader.
    pub compute_cores: u32,
    /// Per-core active power, used to derive the default per-op energy.
    pub core_power_mw: u64,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            n_cores: 5,
            clock_hz: 1_500_000_000,
            simd_width: 32,
            compute_cores: 1,
            core_power_mw: 500,
        }
    }
}

impl CoreConfig {
    pub fn cycles_to_ns(&self, cycles: u64) -> Nanos {
        let num = cycles as u128 * 1_000_000_000u128;
        num.div_ceil(self.clock_hz.max(1) as u128) as Nanos
    }

    /// Energy of one core cycle: power / clock.
    pub fn energy_per_cycle(&self) -> Picojoules {
        // mW * 1e9 / Hz = pJ
        (self.core_power_mw as u128 * 1_000_000_000u128 / self.clock_hz.max(1) as u128)
            as Picojoules
    }
}

/// Energies in picojoules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyTable {
    pub e_read_per_channel: Picojoules,
    pub e_and_or_per_kb: Picojoules,
    pub e_xor_per_kb: Picojoules,
    pub e_latch_per_kb: Picojoules,
    pub e_dma_per_channel: Picojoules,
    pub e_bbop: Picojoules,
    /// One single-cycle native op on a controller core.
    pub e_isp_per_op: Picojoules,
    pub e_prog_per_channel: Picojoules,
    pub e_dram_bus_per_kb: Picojoules,
}

impl Default for EnergyTable {
    fn default() -> Self {
        Self {
            e_read_per_channel: 20_500_000,
            e_and_or_per_kb: 10_000,
            e_xor_per_kb: 20_000,
            e_latch_per_kb: 10_000,
            e_dma_per_channel: 7_656_000,
            e_bbop: 864,
            e_isp_per_op: CoreConfig::default().energy_per_cycle(),
            e_prog_per_channel: 61_500_000,
            e_dram_bus_per_kb: 32_768,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_last_address() {
        let t = SsdTopology::default();
        let zero = FlashAddress { channel: 0, die: 0, plane: 0, block: 0, page: 0 };
        assert_eq!(t.linear_page_index(zero).unwrap(), 0);
        let last = FlashAddress {
            channel: t.channels - 1,
            die: t.dies_per_channel - 1,
            plane: t.planes_per_die - 1,
            block: t.blocks_per_plane - 1,
            page: t.pages_per_block - 1,
        };
        assert_eq!(t.linear_page_index(last).unwrap(), t.total_pages() - 1);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let t = SsdTopology::default();
        let bad = FlashAddress { channel: 8, die: 0, plane: 0, block: 0, page: 0 };
        assert!(t.linear_page_index(bad).is_err());
        assert!(t.address_of(t.total_pages()).is_err());
    }

    #[test]
    fn exhaustive_bijection_small() {
        let t = SsdTopology {
            channels: 2,
            dies_per_channel: 2,
            planes_per_die: 2,
            blocks_per_plane: 3,
            pages_per_block: 5,
            ..Default::default()
        };
        let mut seen = vec![false; t.total_pages() as usize];
        for c in 0..2 {
            for d in 0..2 {
                for p in 0..2 {
                    for b in 0..3 {
                        for pg in 0..5 {
                            let a = FlashAddress { channel: c, die: d, plane: p, block: b, page: pg };
                            let i = t.linear_page_index(a).unwrap();
                            assert!(!seen[i as usize]);
                            seen[i as usize] = true;
                            assert_eq!(t.address_of(i).unwrap(), a);
                        }
                    }
                }
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn consecutive_indices_stripe_channels() {
        let t = SsdTopology::default();
        let a0 = t.address_of(0).unwrap();
        let a1 = t.address_of(1).unwrap();
        assert_ne!(a0.channel, a1.channel);
        let a8 = t.address_of(8).unwrap();
        assert_eq!(a8.channel, 0);
        assert_eq!(a8.die, 1);
    }

    #[test]
    fn transfer_and_energy_helpers() {
        assert_eq!(transfer_time(4096, 1_200_000_000), 3414);
        assert_eq!(energy_per_kib(4096, 10_000), 40_000);
        assert_eq!(energy_per_kib(0, 10_000), 0);
        let c = CoreConfig::default();
        assert_eq!(c.cycles_to_ns(1024), 683);
        assert_eq!(c.energy_per_cycle(), 333);
    }
}
