//! Independent numerical oracles shared by the integration and acceptance
//! tests. Nothing here calls into the library's math beyond plain `f64`.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let pieces = ((b - a).ceil() as usize).clamp(1, 4096);
    let width = (b - a) / pieces as f64;
    let mut stack: Vec<(f64, f64, f64, f64)> = (0..pieces)
        .map(|i| {
            let lo = a + i as f64 * width;
            let hi = if i + 1 == pieces { b } else { lo + width };
            let (v, e) = gk15(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    let mut total: f64 = stack.iter().map(|s| s.2).sum();
    let mut done = 0.0;
    let mut iterations = 0;
    while let Some((lo, hi, v, e)) = stack.pop() {
        iterations += 1;
        let scale = total.abs().max(f64::MIN_POSITIVE);
        if e <= rel_tol * scale * 1e-3 || (hi - lo) < 1e-12 * (1.0 + lo.abs()) || iterations > 200_000 {
            done += v;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        total += v1 + v2 - v;
        stack.push((lo, mid, v1, e1));
        stack.push((mid, hi, v2, e2));
    }
    done
}

/// `ln ∫_0^∞ s^(c-1) e^(-r s) ds = ln Γ(c) - c ln r`, by quadrature in
/// `x = ln s` around the integrand's peak.
pub fn log_gamma_integral(c: f64, r: f64) -> f64 {
    let g = |x: f64| c * x - r * x.exp();
    let peak = (c / r).ln();
    let gp = g(peak);
    let lo = peak - 80.0 / c - 10.0;
    let hi = peak + 10.0f64.max((80.0 / r.max(1e-300) * (-peak).exp()).ln_1p() + 5.0);
    gp + integrate(|x| (g(x) - gp).exp(), lo, hi, 1e-13).ln()
}

/// `ln Γ(z)` from the defining integral.
pub fn ln_gamma_quad(z: f64) -> f64 {
    log_gamma_integral(z, 1.0)
}

/// `ln κ_m(u)` of the generalized gamma Lévy measure by quadrature.
pub fn kappa_log_quad(m: f64, u: f64, a: f64, sigma: f64, tau: f64) -> f64 {
    a.ln() + log_gamma_integral(m - sigma, u + tau) - ln_gamma_quad(1.0 - sigma)
}

/// `φ(u) = ∫ (1 - e^(-u s)) λ(ds)` by quadrature.
pub fn laplace_exponent_quad(u: f64, a: f64, sigma: f64, tau: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let f = |x: f64| -(-u * x.exp()).exp_m1() * (-sigma * x - tau * x.exp()).exp();
    let lo = -(46.0 + u.ln().max(0.0)) / (1.0 - sigma) - u.ln().max(0.0) - 5.0;
    let hi = (60.0 / tau).ln() + 5.0;
    let integral = integrate(f, lo, hi, 1e-13);
    a * integral / ln_gamma_quad(1.0 - sigma).exp()
}

/// Argmax of `f` over a uniform grid of `points` points on `[lo, hi]`.
pub fn grid_argmax<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, points: usize) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..points {
        let x = lo + step * i as f64;
        let y = f(x);
        if y > best.0 {
            best = (y, x);
        }
    }
    best.1
}

/// Two-stage dense grid: a coarse pass over `[lo, hi]` and a fine pass
/// around the coarse argmax.
pub fn refined_grid_argmax<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, points: usize) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let coarse = grid_argmax(&f, lo, hi, points);
    grid_argmax(&f, coarse - 2.0 * step, coarse + 2.0 * step, points)
}

/// The auxiliary-variable log density in `v = ln u`, written out directly.
pub fn log_q_v(v: f64, n: f64, ek: f64, a: f64, sigma: f64, tau: f64) -> f64 {
    let u = v.exp();
    n * v - (n - a * ek) * (u + tau).ln() - a / sigma * ((u + tau).powf(sigma) - tau.powf(sigma))
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, blocks: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..=blocks {
            prefix.push(b);
            rec(prefix, blocks.max(b + 1), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), 0, n, &mut out);
    out
}

/// Relabels a partition so blocks are numbered in order of first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

/// `ln` of the Dirichlet-multinomial marginal of pooled counts (without
/// multinomial coefficients), via `ln Γ` ratios.
pub fn log_dcm(counts: &[f64], alpha: f64) -> f64 {
    let v = counts.len() as f64;
    let total: f64 = counts.iter().sum();
    let mut acc = libm::lgamma(v * alpha) - libm::lgamma(v * alpha + total);
    for &c in counts {
        acc += libm::lgamma(alpha + c) - libm::lgamma(alpha);
    }
    acc
}

/// Exact posterior over set partitions of `docs` (dense count vectors) under
/// the NGGP prior and Dirichlet-multinomial clusters. The EPPF's `U`
/// integral is computed by quadrature in `v = ln U`.
pub fn partition_posterior(docs: &[Vec<f64>], alpha: f64, a: f64, sigma: f64, tau: f64) -> Vec<(Vec<usize>, f64)> {
    let n = docs.len();
    let parts = set_partitions(n);
    let phi = |u: f64| {
        if sigma == 0.0 {
            a * (u / tau).ln_1p()
        } else {
            a / sigma * ((u + tau).powf(sigma) - tau.powf(sigma))
        }
    };
    let log_u_integral = |k: usize| {
        let g = |v: f64| {
            let u = v.exp();
            n as f64 * v + (k as f64 * sigma - n as f64) * (u + tau).ln() - phi(u)
        };
        let peak = grid_argmax(&g, -40.0, 40.0, 80_001);
        let gp = g(peak);
        gp + integrate(|v| (g(v) - gp).exp(), -60.0, 60.0, 1e-12).ln()
    };
    let u_terms: Vec<f64> = (0..=n).map(|k| if k == 0 { 0.0 } else { log_u_integral(k) }).collect();
    let mut logp = Vec::with_capacity(parts.len());
    for p in &parts {
        let k = p.iter().max().unwrap() + 1;
        let mut lp = k as f64 * a.ln() + u_terms[k];
        for b in 0..k {
            let members: Vec<usize> = (0..n).filter(|&i| p[i] == b).collect();
            for j in 1..members.len() {
                lp += (j as f64 - sigma).ln();
            }
            let mut pooled = vec![0.0; docs[0].len()];
            for &i in &members {
                for (w, c) in docs[i].iter().enumerate() {
                    pooled[w] += c;
                }
            }
            lp += log_dcm(&pooled, alpha);
        }
        logp.push(lp);
    }
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logp.iter().map(|l| (l - max).exp()).sum();
    parts.into_iter().zip(logp).map(|(p, l)| (p, (l - max).exp() / z)).collect()
}

/// Pólya predictive of a dense count vector against dense pseudocounts.
pub fn polya_log_predictive(doc: &[u32], counts: &[f64], alpha: f64) -> f64 {
    let v = doc.len() as f64;
    let total: f64 = counts.iter().sum();
    let mut acc = 0.0;
    let mut nd = 0;
    for (w, &c) in doc.iter().enumerate() {
        for j in 0..c {
            acc += (alpha + counts[w] + j as f64).ln();
        }
        nd += c;
    }
    for j in 0..nd {
        acc -= (v * alpha + total + j as f64).ln();
    }
    acc
}

/// Mode of the auxiliary-variable density by plain bisection on its
/// `ln u` slope.
pub fn u_mode_bisect(n: f64, ek: f64, a: f64, sigma: f64, tau: f64) -> f64 {
    let slope = |v: f64| {
        let u = v.exp();
        n - (n - a * ek) * u / (u + tau) - a * u * (u + tau).powf(sigma - 1.0)
    };
    let (mut lo, mut hi) = (-200.0, 200.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

pub struct TraceStep {
    pub assignment: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Direct transcription of the streaming algorithm with dense storage:
/// for `σ = 0` the CRP rule (old `S_k`, new `a`), otherwise the clipped
/// rule with the auxiliary mode computed from `n` and the expected number
/// of clusters.
pub fn straight_line_adf(
    docs: &[Vec<u32>],
    alpha: f64,
    a: f64,
    sigma: f64,
    tau: f64,
    epsilon: f64,
) -> Vec<TraceStep> {
    let v = docs.first().map_or(0, |d| d.len());
    let mut counts: Vec<Vec<f64>> = Vec::new();
    let mut s: Vec<f64> = Vec::new();
    let mut unseen: Vec<f64> = Vec::new();
    let mut out = Vec::new();
    for (n, doc) in docs.iter().enumerate() {
        let k = s.len();
        let mut logw = Vec::with_capacity(k + 1);
        let new_prior = if sigma == 0.0 {
            for j in 0..k {
                logw.push(s[j].ln() + polya_log_predictive(doc, &counts[j], alpha));
            }
            a.ln()
        } else {
            for j in 0..k {
                let w = s[j] - sigma;
                logw.push(if w > 0.0 {
                    w.ln() + polya_log_predictive(doc, &counts[j], alpha)
                } else {
                    f64::NEG_INFINITY
                });
            }
            if n == 0 {
                a.ln()
            } else {
                let ek = k as f64 - unseen.iter().sum::<f64>();
                a.ln() + sigma * (u_mode_bisect(n as f64, ek, a, sigma, tau) + tau).ln()
            }
        };
        logw.push(new_prior + polya_log_predictive(doc, &vec![0.0; v], alpha));
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logw.iter().map(|l| (l - max).exp()).sum();
        let mut q: Vec<f64> = logw.iter().map(|l| (l - max).exp() / z).collect();
        if q[k] > epsilon || q[k] >= 1.0 {
            counts.push(vec![0.0; v]);
            s.push(0.0);
            unseen.push(1.0);
        } else {
            q.pop();
            let z: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= z);
        }
        for j in 0..q.len() {
            if q[j] > 0.0 {
                for w in 0..v {
                    counts[j][w] += q[j] * doc[w] as f64;
                }
                s[j] += q[j];
            }
            unseen[j] *= (1.0 - q[j]).max(0.0);
        }
        out.push(TraceStep { assignment: q, masses: s.clone() });
    }
    out
}
