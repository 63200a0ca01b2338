//! Branch-free `exp` for the plane kernels.
//!
//! `f64::exp` goes through libm one element at a time; this version is plain
//! arithmetic plus integer bit tricks, so loops over planes auto-vectorise.
//! Accuracy is within a few ulp of `f64::exp` on `[-708, 709]`; inputs below
//! that flush to zero.

const LOG2E: f64 = std::f64::consts::LOG2_E;
// fdlibm split of ln 2
#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
#[allow(clippy::excessive_precision)]
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
/// 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;
const UNDERFLOW: f64 = -708.0;
const OVERFLOW: f64 = 709.0;

// 1/n! for n = 2..=13
const C2: f64 = 1.0 / 2.0;
const C3: f64 = 1.0 / 6.0;
const C4: f64 = 1.0 / 24.0;
const C5: f64 = 1.0 / 120.0;
const C6: f64 = 1.0 / 720.0;
const C7: f64 = 1.0 / 5040.0;
const C8: f64 = 1.0 / 40320.0;
const C9: f64 = 1.0 / 362_880.0;
const C10: f64 = 1.0 / 3_628_800.0;
const C11: f64 = 1.0 / 39_916_800.0;
const C12: f64 = 1.0 / 479_001_600.0;
const C13: f64 = 1.0 / 6_227_020_800.0;

#[inline(always)]
fn madd<const FMA: bool>(a: f64, b: f64, c: f64) -> f64 {
    if FMA {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `FMA = true` must only be used where the target has hardware FMA;
/// otherwise `mul_add` falls back to a slow library call.
#[inline(always)]
pub(crate) fn exp_with<const FMA: bool>(x: f64) -> f64 {
    let xc = x.clamp(UNDERFLOW, OVERFLOW);
    let t = madd::<FMA>(xc, LOG2E, ROUND_SHIFT);
    let k = t - ROUND_SHIFT;
    let r = madd::<FMA>(-k, LN2_LO, madd::<FMA>(-k, LN2_HI, xc));
    let p = madd::<FMA>(r, C13, C12);
    let p = madd::<FMA>(r, p, C11);
    let p = madd::<FMA>(r, p, C10);
    let p = madd::<FMA>(r, p, C9);
    let p = madd::<FMA>(r, p, C8);
    let p = madd::<FMA>(r, p, C7);
    let p = madd::<FMA>(r, p, C6);
    let p = madd::<FMA>(r, p, C5);
    let p = madd::<FMA>(r, p, C4);
    let p = madd::<FMA>(r, p, C3);
    let p = madd::<FMA>(r, p, C2);
    let p = madd::<FMA>(r, madd::<FMA>(r, p, 1.0), 1.0);
    let ki = t.to_bits().wrapping_sub(ROUND_SHIFT.to_bits());
    let scale = f64::from_bits(ki.wrapping_add(1023) << 52);
    let y = p * scale;
    if x < UNDERFLOW {
        0.0
    } else {
        y
    }
}
