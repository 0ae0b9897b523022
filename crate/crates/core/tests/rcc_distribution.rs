//! Distributional exactness of the PFR sampler beyond one dimension:
//! per-marginal KS tests plus pairwise-correlation checks on decoded
//! samples, at alpha = 0.001.

use rayon::prelude::*;

use drc_core::gaussian::{kl_bits, DiagonalGaussian};
use drc_core::pipeline::per_item_seed;
use drc_core::rcc::{pfr_decode, pfr_encode, w_min_with_slack};
use drc_core::sampler::SamplerKey;

fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.5 * z.abs());
    let tau = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    let erfc = if z >= 0.0 { tau } else { 2.0 - tau };
    1.0 - 0.5 * erfc
}

#[test]
fn multivariate_decoded_samples_match_q() {
    let q = DiagonalGaussian::new(vec![0.9, -0.5, 0.3], vec![0.8, 1.0, 1.3]).unwrap();
    let p = DiagonalGaussian::standard(3);
    let kl_nats = kl_bits(&q, &p).unwrap() * std::f64::consts::LN_2;
    // High slack keeps premature termination far below KS sensitivity.
    let w_min = w_min_with_slack(kl_nats, 10.0);
    let trials = 20_000u64;
    let samples: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let key = SamplerKey::from_seed(per_item_seed(0x3D, 0, i));
            let r = pfr_encode(&q, &p, w_min, &key, 2, 1 << 26).unwrap();
            pfr_decode(r.index, &p, &key, 2).unwrap()
        })
        .collect();

    let n = trials as f64;
    let d_crit = 1.9495 / (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    for dim in 0..3 {
        let mut marginal: Vec<f64> = samples.iter().map(|s| s[dim]).collect();
        marginal.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mu = q.mean()[dim];
        let sd = q.variance()[dim].sqrt();
        let mut d = 0.0f64;
        for (i, &x) in marginal.iter().enumerate() {
            let f = normal_cdf((x - mu) / sd);
            d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
        }
        assert!(d < d_crit, "marginal {dim}: KS D {d:.5} >= {d_crit:.5}");
    }

    // Pairwise correlations of a diagonal q vanish; the sample correlation
    // of independent pairs has sd ~ 1/sqrt(n).
    let bound = 5.0 / n.sqrt();
    for a in 0..3 {
        for b in (a + 1)..3 {
            let ma = samples.iter().map(|s| s[a]).sum::<f64>() / n;
            let mb = samples.iter().map(|s| s[b]).sum::<f64>() / n;
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for s in &samples {
                cov += (s[a] - ma) * (s[b] - mb);
                va += (s[a] - ma) * (s[a] - ma);
                vb += (s[b] - mb) * (s[b] - mb);
            }
            let corr = cov / (va.sqrt() * vb.sqrt());
            assert!(corr.abs() < bound, "corr({a},{b}) = {corr:.5} exceeds {bound:.5}");
        }
    }
}
