//! Special functions and confidence limits for a binomial proportion.
//!
//! Binomial probabilities use Loader's saddle-point form (Stirling remainder
//! plus the deviance `bd0`), which keeps relative accuracy near 1e-15 for
//! every term including deep tails. Tail sums always add the smaller side and
//! complement only when the requested range straddles the mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the proportion axis for every root finder here.
pub const ROOT_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Exponent of the Chernoff bound: `z ln(theta/z) + (1-z) ln((1-theta)/(1-z))`.
///
/// Uses the boundary forms at `z = 0` and `z = 1`, and `-inf` whenever `theta`
/// is not strictly inside `(0, 1)`.
pub fn large_dev(z: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Domain {
            name: "z",
            value: z,
            expected: "0 <= z <= 1",
        });
    }
    if theta.is_nan() || theta <= 0.0 || theta >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(large_dev_inner(z, theta))
}

fn large_dev_inner(z: f64, theta: f64) -> f64 {
    if z == 0.0 {
        (-theta).ln_1p()
    } else if z == 1.0 {
        theta.ln()
    } else {
        z * (theta / z).ln() + (1.0 - z) * ((1.0 - theta) / (1.0 - z)).ln()
    }
}

/// `ln n! - ((n + 1/2) ln n - n + ln sqrt(2 pi))`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    const SMALL: [f64; 16] = [
        0.0,
        0.081_061_466_795_327_258_22,
        0.041_340_695_955_409_294_094,
        0.027_677_925_684_998_339_149,
        0.020_790_672_103_765_093_112,
        0.016_644_691_189_821_192_163,
        0.013_876_128_823_070_747_999,
        0.011_896_709_945_891_770_095,
        0.010_411_265_261_972_096_497,
        0.009_255_462_182_712_732_917_7,
        0.008_330_563_433_362_871_256_5,
        0.007_573_675_487_951_840_795,
        0.006_942_840_107_209_529_865_7,
        0.006_408_994_188_004_207_068_4,
        0.005_951_370_112_758_847_735_6,
        0.005_554_733_551_962_801_371,
    ];
    if n <= 15 {
        return SMALL[n as usize];
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Binomial probability `C(n,k) p^k (1-p)^(n-k)` for `p` in `[0, 1]`.
pub fn binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * (-p).ln_1p() };
        return lc.exp();
    }
    if k == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = std::f64::consts::TAU.ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Full probability vector of Binomial(n, p), trimmed of exact zeros.
///
/// Returns `(offset, masses)` where `masses[j]` is the probability of
/// `offset + j` successes.
pub fn binom_pmf_vec(n: u64, p: f64) -> (u64, Vec<f64>) {
    if p <= 0.0 {
        return (0, vec![1.0]);
    }
    if p >= 1.0 {
        return (n, vec![1.0]);
    }
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as u64;
    let mut lo = mode;
    while lo > 0 && binom_pmf(lo - 1, n, p) > 0.0 {
        lo -= 1;
    }
    let mut out = Vec::new();
    let mut k = lo;
    while k <= n {
        let m = binom_pmf(k, n, p);
        if m == 0.0 && k > mode {
            break;
        }
        out.push(m);
        k += 1;
    }
    (lo, out)
}

fn tail_sum(from: u64, to: u64, n: u64, p: f64, toward_high: bool) -> f64 {
    // Sums the range starting next to the mode so that the loop can stop once
    // terms no longer change the total.
    let mut acc = CompensatedSum::new();
    let push = |k: u64, acc: &mut CompensatedSum| -> bool {
        let t = binom_pmf(k, n, p);
        let before = acc.value();
        acc.add(t);
        t == 0.0 || t <= before * 1e-18
    };
    if toward_high {
        for k in from..=to {
            if push(k, &mut acc) && k > from {
                break;
            }
        }
    } else {
        for k in (from..=to).rev() {
            if push(k, &mut acc) && k < to {
                break;
            }
        }
    }
    acc.value()
}

/// `S(k, l, n, p) = sum_{i=k}^{l} C(n,i) p^i (1-p)^(n-i)`, and 0 for `p` outside `(0, 1)`.
pub fn binom_range_sum(k: u64, l: u64, n: u64, p: f64) -> Result<f64> {
    if k > l || l > n {
        return Err(Error::IndexOrder { k, l, n });
    }
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Ok(0.0);
    }
    let mode = (((n + 1) as f64) * p).floor().min(n as f64) as u64;
    let s = if l < mode {
        // entirely below the mode: start at l and walk down
        tail_sum(k, l, n, p, false)
    } else if k > mode {
        tail_sum(k, l, n, p, true)
    } else {
        let below = if k == 0 { 0.0 } else { tail_sum(0, k - 1, n, p, false) };
        let above = if l == n { 0.0 } else { tail_sum(l + 1, n, n, p, true) };
        1.0 - below - above
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

fn poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Wichura's AS 241 approximation to the inverse normal distribution function.
fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_4e3,
        1.373_169_376_550_946_1e4,
        4.592_195_393_154_987e4,
        6.726_577_092_700_87e4,
        3.343_057_558_358_813e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854_5e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Upper critical value `Z_alpha` with `Phi(Z_alpha) = 1 - alpha`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            expected: "0 < alpha < 1",
        });
    }
    if alpha == 0.5 {
        return Ok(0.0);
    }
    // Work in the lower tail where alpha is known to full relative precision.
    let (tail, flip) = if alpha < 0.5 { (alpha, false) } else { (1.0 - alpha, true) };
    let mut x = ppnd16(tail);
    for _ in 0..3 {
        let step = (normal_cdf(x) - tail) / normal_pdf(x);
        x -= step;
        if step.abs() < 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    // x is the lower quantile Phi^{-1}(tail) <= 0
    Ok(if flip { x } else { -x })
}

/// Root of a monotone `f` on `(lo, hi)`; `f` is evaluated only at interior points.
fn bisect<F: Fn(f64) -> f64>(
    mut lo: f64,
    mut hi: f64,
    f: F,
    increasing: bool,
    what: &'static str,
) -> Result<f64> {
    for _ in 0..ROOT_MAX_ITER {
        if hi - lo <= ROOT_TOL {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if (v < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::RootNotConverged {
        what,
        iterations: ROOT_MAX_ITER,
    })
}

fn check_level(c: f64) -> Result<()> {
    if c.is_nan() || c <= 0.0 || c >= 1.0 {
        return Err(Error::Domain {
            name: "c",
            value: c,
            expected: "0 < c < 1",
        });
    }
    Ok(())
}

/// Clopper-Pearson upper limit: the root of `S(0, k, n, U) = c`. Requires `k < n`.
pub fn cp_upper_limit(k: u64, n: u64, c: f64) -> Result<f64> {
    check_level(c)?;
    if k >= n {
        return Err(Error::Domain {
            name: "k",
            value: k as f64,
            expected: "k < n for the upper Clopper-Pearson limit",
        });
    }
    if k == 0 {
        return Ok(-(c.ln() / n as f64).exp_m1());
    }
    bisect(0.0, 1.0, |t| binom_range_sum(0, k, n, t).unwrap_or(0.0) - c, false, "cp upper")
}

/// Clopper-Pearson lower limit: the root of `S(k, n, n, L) = c`. Requires `k > 0`.
pub fn cp_lower_limit(k: u64, n: u64, c: f64) -> Result<f64> {
    check_level(c)?;
    if k == 0 || k > n {
        return Err(Error::Domain {
            name: "k",
            value: k as f64,
            expected: "0 < k <= n for the lower Clopper-Pearson limit",
        });
    }
    if k == n {
        return Ok((c.ln() / n as f64).exp());
    }
    bisect(0.0, 1.0, |t| binom_range_sum(k, n, n, t).unwrap_or(0.0) - c, true, "cp lower")
}

/// Interval estimation method used to build an inclusion-principle rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CiFamily {
    Wald,
    /// Wald interval whose variance uses `(k + a) / (n + 2a)`.
    RevisedWald { a: f64 },
    Wilson,
    ClopperPearson,
    /// Chernoff-bound limits solving `M(k/n, theta) = ln(c) / n`.
    Fishman,
    /// Limits derived from Massart's inequality.
    ChenMassart,
}

impl CiFamily {
    pub fn validate(&self) -> Result<()> {
        if let CiFamily::RevisedWald { a } = *self {
            if a.is_nan() || a <= 0.0 {
                return Err(Error::Domain {
                    name: "a",
                    value: a,
                    expected: "a > 0",
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiLimits {
    pub lower: f64,
    pub upper: f64,
}

/// Stage-level confidence limits for `k` successes in `n` trials at level parameter `c`.
///
/// Wald-type limits are returned unclamped; Wilson and Chen-Massart limits
/// carry the max/min clamps of their closed forms.
pub fn ci_limits(family: CiFamily, c: f64, k: u64, n: u64) -> Result<CiLimits> {
    check_level(c)?;
    family.validate()?;
    if n == 0 || k > n {
        return Err(Error::IndexOrder { k, l: k, n });
    }
    let nf = n as f64;
    let p_hat = k as f64 / nf;
    let limits = match family {
        CiFamily::Wald => {
            let z = normal_quantile(c)?;
            let half = z * (p_hat * (1.0 - p_hat) / nf).sqrt();
            CiLimits {
                lower: p_hat - half,
                upper: p_hat + half,
            }
        }
        CiFamily::RevisedWald { a } => {
            let z = normal_quantile(c)?;
            let shifted = (k as f64 + a) / (nf + 2.0 * a);
            let half = z * (shifted * (1.0 - shifted) / nf).sqrt();
            CiLimits {
                lower: p_hat - half,
                upper: p_hat + half,
            }
        }
        CiFamily::Wilson => {
            let z = normal_quantile(c)?;
            let z2 = z * z;
            let center = p_hat + z2 / (2.0 * nf);
            let spread = z * (p_hat * (1.0 - p_hat) / nf + (z / (2.0 * nf)).powi(2)).sqrt();
            let scale = 1.0 + z2 / nf;
            CiLimits {
                lower: ((center - spread) / scale).max(0.0),
                upper: ((center + spread) / scale).min(1.0),
            }
        }
        CiFamily::ClopperPearson => CiLimits {
            lower: if k == 0 { 0.0 } else { cp_lower_limit(k, n, c)? },
            upper: if k == n { 1.0 } else { cp_upper_limit(k, n, c)? },
        },
        CiFamily::Fishman => {
            let target = c.ln() / nf;
            let f = |t: f64| large_dev_inner(p_hat, t) - target;
            CiLimits {
                lower: if k == 0 { 0.0 } else { bisect(0.0, p_hat, f, true, "fishman lower")? },
                upper: if k == n { 1.0 } else { bisect(p_hat, 1.0, f, false, "fishman upper")? },
            }
        }
        CiFamily::ChenMassart => {
            let lnc = (1.0 / c).ln();
            let root = (1.0 + 9.0 * nf / (2.0 * lnc) * p_hat * (1.0 - p_hat)).sqrt();
            let denom = 1.0 + 9.0 * nf / (8.0 * lnc);
            CiLimits {
                lower: (p_hat + 0.75 * (1.0 - 2.0 * p_hat - root) / denom).max(0.0),
                upper: (p_hat + 0.75 * (1.0 - 2.0 * p_hat + root) / denom).min(1.0),
            }
        }
    };
    Ok(limits)
}
