//! Box sharpness of a quadratic with a known answer, in the full space
//! and in a random subspace.

use flatbasin::landscape::{sharpness, SharpnessConfig};
use flatbasin::numcore::ParamVector;

fn main() -> flatbasin::Result<()> {
    // f(w) = ½ Σ h_i (w_i − c_i)², evaluated at its minimum c
    let h = [4.0, 1.0, 0.25, 9.0];
    let c = [1.0, -2.0, 0.5, 0.0];
    let f = |w: &ParamVector| {
        let d: Vec<f64> = w.values.iter().zip(&c).map(|(w, c)| w - c).collect();
        let loss = 0.5 * d.iter().zip(&h).map(|(d, h)| h * d * d).sum::<f64>();
        Ok((loss, ParamVector::from_values(d.iter().zip(&h).map(|(d, h)| h * d).collect())))
    };
    let x = ParamVector::from_values(c.to_vec());

    for epsilon in [5e-4, 1e-3, 1e-2] {
        let exact: f64 = 100.0 * (0..4).map(|i| 0.5 * h[i] * (epsilon * (c[i].abs() + 1.0)).powi(2)).sum::<f64>();
        let full = sharpness(f, &x, &SharpnessConfig { epsilon, ..SharpnessConfig::default() })?;
        let sub = sharpness(f, &x, &SharpnessConfig { epsilon, p: 2, max_iters: 10, seed: 7 })?;
        println!(
            "eps {epsilon:.0e}: phi {:.6e} (box maximum {exact:.6e}, {} iterations), 2-d subspace {:.6e}",
            full.phi, full.iterations, sub.phi
        );
    }
    Ok(())
}
