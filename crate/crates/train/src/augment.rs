use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tanet_tensor::Tensor;

/// One of the eight dihedral transforms: 0-3 clockwise quarter turns,
/// optionally preceded by a horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DihedralVariant {
    pub quarter_turns: u8,
    pub flip_h: bool,
}

impl DihedralVariant {
    pub const COUNT: usize = 8;

    pub const IDENTITY: DihedralVariant = DihedralVariant {
        quarter_turns: 0,
        flip_h: false,
    };

    pub fn from_index(i: usize) -> Self {
        DihedralVariant {
            quarter_turns: (i % 4) as u8,
            flip_h: i >= 4,
        }
    }

    pub fn index(self) -> usize {
        self.quarter_turns as usize + if self.flip_h { 4 } else { 0 }
    }

    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self::from_index(rng.random_range(0..Self::COUNT))
    }
}

fn rotate90_cw(t: &Tensor) -> Tensor {
    let [c, h, w] = t.shape() else {
        panic!("dihedral ops need [C,H,W], got {:?}", t.shape())
    };
    let (c, h, w) = (*c, *h, *w);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                // (y, x) -> (x, h-1-y) in the rotated (w x h) frame
                out[(ch * w + x) * h + (h - 1 - y)] = src[(ch * h + y) * w + x];
            }
        }
    }
    Tensor::new(vec![c, w, h], out).expect("rotation preserves element count")
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let [c, h, w] = t.shape() else {
        panic!("dihedral ops need [C,H,W], got {:?}", t.shape())
    };
    let (c, h, w) = (*c, *h, *w);
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + (w - 1 - x)] = src[(ch * h + y) * w + x];
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("flip preserves element count")
}

/// Applies a dihedral variant to a planar `[C,H,W]` tensor.
pub fn apply_dihedral(t: &Tensor, variant: DihedralVariant) -> Tensor {
    let mut out = if variant.flip_h { flip_horizontal(t) } else { t.clone() };
    for _ in 0..variant.quarter_turns {
        out = rotate90_cw(&out);
    }
    out
}

/// Draws one variant and applies it identically to the HR/LR pair,
/// keeping their spatial alignment.
pub fn augment_pair(hr: &Tensor, lr: &Tensor, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let variant = DihedralVariant::draw(rng);
    (apply_dihedral(hr, variant), apply_dihedral(lr, variant))
}
