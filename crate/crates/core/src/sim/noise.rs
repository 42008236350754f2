//! Small deterministic hashing and value-noise helpers.

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write(&v.to_bits().to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// SplitMix64 finalizer; good avalanche for lattice hashing.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from a lattice coordinate.
pub fn lattice_unit(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ mix64(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinearly interpolated value noise in [0, 1] with lattice spacing `scale`.
pub fn value_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let gx = x / scale;
    let gy = y / scale;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let tx = smooth(gx - x0);
    let ty = smooth(gy - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice_unit(seed, ix, iy);
    let b = lattice_unit(seed, ix + 1, iy);
    let c = lattice_unit(seed, ix, iy + 1);
    let d = lattice_unit(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
