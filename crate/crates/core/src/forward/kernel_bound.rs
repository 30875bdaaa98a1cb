use crate::optics::OpticalMedium;
use crate::quadrature::adaptive_with_breaks;
use std::f64::consts::PI;

/// Constants C_{n+2} bounding the (n+2)-fold collision kernel divided by
/// the entry chord, for the unit ball, indexed by n = 2, 3.
///
/// They are 1.25 × the peak of the (n+1)-fold iterate of the line kernel
/// |x − y|^{1−n} on the unit ball (92.08 and 7592.9), computed by
/// [`line_kernel_peak`].
pub const LINE_KERNEL_CONSTANTS: [(usize, f64); 2] = [(2, 115.1), (3, 9491.2)];

/// C_{n+2} e^{(n+2)‖τσ₋‖} ‖k‖^{n+2}; the exponential is 1 since σ ≥ 0.
pub fn kernel_bound_e1(medium: &OpticalMedium) -> f64 {
    let n = medium.dimension();
    let c = LINE_KERNEL_CONSTANTS
        .iter()
        .find(|(d, _)| *d == n)
        .map(|(_, c)| *c)
        .unwrap_or(f64::INFINITY);
    let k = medium.k_sup();
    if k == 0.0 {
        0.0
    } else {
        c * k.powi(n as i32 + 2)
    }
}

/// Complete elliptic integral of the first kind from the complementary
/// modulus k' = √(1 − k²).
fn elliptic_k(kc: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, kc);
    if b == 0.0 {
        return f64::INFINITY;
    }
    for _ in 0..40 {
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
        if (a - b).abs() < 1e-16 * a {
            break;
        }
    }
    PI / (2.0 * a)
}

/// Spherical average of |ρ e − r ω|^{1−n} over ω, times |V|.
fn shell_kernel(n: usize, rho: f64, r: f64) -> f64 {
    if n == 2 {
        if rho == 0.0 {
            return 2.0 * PI / r;
        }
        4.0 * elliptic_k((rho - r).abs() / (rho + r)) / (rho + r)
    } else {
        if rho == 0.0 {
            return 4.0 * PI / (r * r);
        }
        2.0 * PI / (rho * r) * ((rho + r) / (rho - r).abs()).ln()
    }
}

/// Peak over |z| of G^{(n+1)}(0, z), G(x, y) = |x − y|^{1−n} on the unit ball.
///
/// The radial iterates f_{j+1}(ρ) = ∫₀¹ f_j(r) r^{n−1} A(ρ, r) dr are
/// tabulated on a graded grid; the peak sits at the centre.
pub fn line_kernel_peak(n: usize) -> f64 {
    let mut grid: Vec<f64> = (0..=100)
        .map(|i| 1e-4f64.powf(1.0 - i as f64 / 100.0))
        .collect();
    grid.extend((1..80).map(|i| i as f64 / 80.0));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let interp = |vals: &[f64], r: f64| -> f64 {
        let i = grid.partition_point(|&g| g < r);
        if i == 0 {
            return vals[0];
        }
        if i >= grid.len() {
            return vals[grid.len() - 1];
        }
        let (a, b) = (grid[i - 1], grid[i]);
        let w = (r - a) / (b - a);
        vals[i - 1] * (1.0 - w) + vals[i] * w
    };
    let integrate = |rho: f64, f: &dyn Fn(f64) -> f64| -> f64 {
        let breaks: Vec<f64> = if rho > 0.0 && rho < 1.0 {
            vec![0.0, rho, 1.0]
        } else {
            vec![0.0, 1.0]
        };
        adaptive_with_breaks(
            |r| f(r) * shell_kernel(n, rho, r),
            &breaks,
            1e-7,
            1e-12,
            300,
        )
        .value
    };
    let mut vals: Vec<f64> = grid.iter().map(|&rho| integrate(rho, &|_| 1.0)).collect();
    for _ in 3..=n {
        let prev = vals.clone();
        let p = n as i32 - 1;
        vals = grid
            .iter()
            .map(|&rho| integrate(rho, &|r| interp(&prev, r) * r.powi(p)))
            .collect();
    }
    // last step evaluated at the centre: |V| ∫₀¹ f_n(r) dr
    let sphere = if n == 2 { 2.0 * PI } else { 4.0 * PI };
    sphere * adaptive_with_breaks(|r| interp(&vals, r), &grid, 1e-9, 1e-12, 20).value
}
