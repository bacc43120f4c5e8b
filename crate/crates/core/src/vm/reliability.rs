use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ir::{Reg, SiteId, REG_COUNT};

/// A contiguous run of memory words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Region {
    pub start: u64,
    pub len: u64,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.start + self.len
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reliability {
    Reliable,
    Unreliable,
}

/// One row of a memory region table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub start: u64,
    pub len: u64,
    pub reliability: Reliability,
}

/// Which storage and functional units are fault-immune. The empty map is the
/// baseline (all-SRAM) architecture.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliabilityMap {
    pub reliable_registers: BTreeSet<Reg>,
    pub reliable_regions: Vec<Region>,
    pub reliable_sites: BTreeSet<SiteId>,
}

impl ReliabilityMap {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn is_baseline(&self) -> bool {
        self.reliable_registers.is_empty() && self.reliable_regions.is_empty() && self.reliable_sites.is_empty()
    }

    /// Everything reliable: every register, all of memory and every site in
    /// `0..site_count`.
    pub fn full(site_count: usize, memory_words: u64) -> Self {
        Self {
            reliable_registers: (0..REG_COUNT as u8).map(Reg).collect(),
            reliable_regions: vec![Region {
                start: 0,
                len: memory_words,
            }],
            reliable_sites: (0..site_count as u32).map(SiteId).collect(),
        }
    }

    pub fn register_is_reliable(&self, r: Reg) -> bool {
        self.reliable_registers.contains(&r)
    }

    pub fn address_is_reliable(&self, addr: u64) -> bool {
        self.reliable_regions.iter().any(|r| r.contains(addr))
    }

    /// Merges overlapping or adjacent reliable regions and sorts them.
    pub fn coalesce_regions(&mut self) {
        self.reliable_regions = coalesce(&self.reliable_regions);
    }

    /// Full region table over `[0, size)`: reliable regions clipped to the
    /// memory size, gaps filled with unreliable entries.
    pub fn region_table(&self, size: u64) -> Vec<RegionEntry> {
        let mut table = Vec::new();
        let mut cursor = 0;
        for r in coalesce(&self.reliable_regions) {
            let start = r.start.min(size);
            let end = r.end().min(size);
            if start >= end {
                continue;
            }
            if start > cursor {
                table.push(RegionEntry {
                    start: cursor,
                    len: start - cursor,
                    reliability: Reliability::Unreliable,
                });
            }
            table.push(RegionEntry {
                start,
                len: end - start,
                reliability: Reliability::Reliable,
            });
            cursor = end;
        }
        if cursor < size {
            table.push(RegionEntry {
                start: cursor,
                len: size - cursor,
                reliability: Reliability::Unreliable,
            });
        }
        table
    }
}

fn coalesce(regions: &[Region]) -> Vec<Region> {
    let mut sorted: Vec<Region> = regions.iter().copied().filter(|r| r.len > 0).collect();
    sorted.sort();
    let mut out: Vec<Region> = Vec::with_capacity(sorted.len());
    for r in sorted {
        match out.last_mut() {
            Some(last) if r.start <= last.end() => {
                let end = last.end().max(r.end());
                last.len = end - last.start;
            }
            _ => out.push(r),
        }
    }
    out
}

/// Flattened form of a [`ReliabilityMap`] for the interpreter's hot path.
#[derive(Debug, Clone)]
pub(crate) struct Protection {
    registers: u64,
    sites: Vec<bool>,
    regions: Vec<Region>,
}

impl Protection {
    pub(crate) fn new(map: &ReliabilityMap, site_count: usize) -> Self {
        let mut sites = vec![false; site_count];
        for s in &map.reliable_sites {
            if let Some(slot) = sites.get_mut(s.index()) {
                *slot = true;
            }
        }
        Self {
            registers: map
                .reliable_registers
                .iter()
                .filter(|r| r.index() < REG_COUNT)
                .fold(0u64, |m, r| m | 1 << r.0),
            sites,
            regions: coalesce(&map.reliable_regions),
        }
    }

    #[inline]
    pub(crate) fn site(&self, site: u32) -> bool {
        self.sites[site as usize]
    }

    #[inline]
    pub(crate) fn register(&self, r: u8) -> bool {
        self.registers >> r & 1 == 1
    }

    #[inline]
    pub(crate) fn address(&self, addr: u64) -> bool {
        self.regions.iter().any(|r| r.contains(addr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_cover(table: &[RegionEntry], size: u64) {
        let mut cursor = 0;
        for e in table {
            assert_eq!(e.start, cursor);
            assert!(e.len > 0);
            cursor += e.len;
        }
        assert_eq!(cursor, size);
    }

    #[test]
    fn default_table_is_one_unreliable_region() {
        let table = ReliabilityMap::baseline().region_table(65_536);
        assert_eq!(
            table,
            vec![RegionEntry {
                start: 0,
                len: 65_536,
                reliability: Reliability::Unreliable
            }]
        );
    }

    #[test]
    fn table_is_disjoint_and_covering() {
        let map = ReliabilityMap {
            reliable_regions: vec![
                Region { start: 10, len: 5 },
                Region { start: 12, len: 8 },
                Region { start: 0, len: 2 },
                Region { start: 100, len: 50 },
            ],
            ..Default::default()
        };
        let table = map.region_table(120);
        check_cover(&table, 120);
        let reliable: Vec<_> = table
            .iter()
            .filter(|e| e.reliability == Reliability::Reliable)
            .map(|e| (e.start, e.len))
            .collect();
        assert_eq!(reliable, vec![(0, 2), (10, 10), (100, 20)]);
    }

    #[test]
    fn adjacent_regions_merge() {
        let mut map = ReliabilityMap {
            reliable_regions: vec![Region { start: 4, len: 4 }, Region { start: 0, len: 4 }],
            ..Default::default()
        };
        map.coalesce_regions();
        assert_eq!(map.reliable_regions, vec![Region { start: 0, len: 8 }]);
    }

    #[test]
    fn protection_lookup() {
        let map = ReliabilityMap {
            reliable_registers: [Reg(3), Reg(63)].into_iter().collect(),
            reliable_regions: vec![Region { start: 8, len: 2 }],
            reliable_sites: [SiteId(1)].into_iter().collect(),
        };
        let p = Protection::new(&map, 3);
        assert!(p.register(3) && p.register(63) && !p.register(0));
        assert!(p.site(1) && !p.site(0));
        assert!(p.address(9) && !p.address(10));
    }
}
