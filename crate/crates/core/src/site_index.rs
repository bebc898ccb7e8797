//! Open-addressing map from lattice sites to positions on a path.
//!
//! Keys are never stored: a slot holds the site's hash and its position, and
//! equality is decided against the owning path's flat coordinate buffer. The
//! owner must keep the buffer and the index in sync (insert on append, remove
//! on truncation). Deletion uses backward shifting, so there are no
//! tombstones, and `clear` is O(1) through an epoch counter.

#[derive(Clone, Copy, Debug, Default)]
struct Slot {
    epoch: u32,
    pos: u32,
    hash: u64,
}

#[derive(Clone, Debug)]
pub struct SiteIndex {
    slots: Vec<Slot>,
    mask: usize,
    len: usize,
    epoch: u32,
}

#[inline]
pub fn hash_coords(c: &[i32]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &x in c {
        h = (h ^ (x as u32 as u64)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        h ^= h >> 32;
    }
    h ^= h >> 29;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^ (h >> 32)
}

impl Default for SiteIndex {
    fn default() -> Self {
        Self::with_capacity(16)
    }
}

impl SiteIndex {
    pub fn with_capacity(n: usize) -> Self {
        let cap = (2 * n.max(8)).next_power_of_two();
        Self { slots: vec![Slot::default(); cap], mask: cap - 1, len: 0, epoch: 1 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn clear(&mut self) {
        self.len = 0;
        if self.epoch == u32::MAX {
            self.slots.iter_mut().for_each(|s| *s = Slot::default());
            self.epoch = 1;
        } else {
            self.epoch += 1;
        }
    }

    #[inline]
    fn live(&self, i: usize) -> bool {
        self.slots[i].epoch == self.epoch
    }

    /// Position of `key` in `store` (flat buffer, `dim` coordinates per point).
    #[inline]
    pub fn find(&self, key: &[i32], hash: u64, store: &[i32], dim: usize) -> Option<usize> {
        let mut i = hash as usize & self.mask;
        while self.live(i) {
            let s = self.slots[i];
            if s.hash == hash {
                let p = s.pos as usize;
                if &store[p * dim..(p + 1) * dim] == key {
                    return Some(p);
                }
            }
            i = (i + 1) & self.mask;
        }
        None
    }

    /// Inserts a site known to be absent.
    #[inline]
    pub fn insert(&mut self, hash: u64, pos: usize) {
        if 2 * (self.len + 1) > self.slots.len() {
            self.grow();
        }
        let mut i = hash as usize & self.mask;
        while self.live(i) {
            i = (i + 1) & self.mask;
        }
        self.slots[i] = Slot { epoch: self.epoch, pos: pos as u32, hash };
        self.len += 1;
    }

    /// Removes the entry for position `pos` whose site hashes to `hash`.
    pub fn remove(&mut self, hash: u64, pos: usize) {
        let mut i = hash as usize & self.mask;
        loop {
            debug_assert!(self.live(i), "removing an absent site");
            if !self.live(i) {
                return;
            }
            let s = self.slots[i];
            if s.pos as usize == pos && s.hash == hash {
                break;
            }
            i = (i + 1) & self.mask;
        }
        let mut hole = i;
        let mut j = (i + 1) & self.mask;
        while self.live(j) {
            let home = self.slots[j].hash as usize & self.mask;
            let from_home = j.wrapping_sub(home) & self.mask;
            let from_hole = j.wrapping_sub(hole) & self.mask;
            if from_home >= from_hole {
                self.slots[hole] = self.slots[j];
                hole = j;
            }
            j = (j + 1) & self.mask;
        }
        self.slots[hole].epoch = 0;
        self.len -= 1;
    }

    fn grow(&mut self) {
        let live: Vec<Slot> = self.slots.iter().copied().filter(|s| s.epoch == self.epoch).collect();
        let cap = self.slots.len() * 2;
        self.slots = vec![Slot::default(); cap];
        self.mask = cap - 1;
        self.epoch = 1;
        for s in live {
            let mut i = s.hash as usize & self.mask;
            while self.live(i) {
                i = (i + 1) & self.mask;
            }
            self.slots[i] = Slot { epoch: 1, ..s };
        }
    }
}
