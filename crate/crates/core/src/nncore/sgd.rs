//! Plain SGD with global-norm gradient clipping.

/// L2 norm over a set of gradient slices taken together.
pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// One SGD step: rescale the whole gradient if its global L2 norm exceeds
/// `clip`, then params ← params − lr·grads. Pass `f64::INFINITY` to disable
/// clipping.
pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, clip: f64) {
    assert!(lr > 0.0, "learning rate must be positive");
    assert_eq!(params.len(), grads.len(), "param/grad slice count mismatch");
    let norm = global_norm(grads);
    let scale = if norm > clip { clip / norm } else { 1.0 };
    for (p, g) in params.iter_mut().zip(grads) {
        assert_eq!(p.len(), g.len(), "param/grad length mismatch");
        for (pv, gv) in p.iter_mut().zip(g.iter()) {
            *pv -= lr * scale * gv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut w = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        sgd_step(&mut [&mut w], &[&g], 0.5, 5.0);
        assert_eq!(w, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn quadratic_single_step_closed_form() {
        // f(w) = w², grad = 2w; from w=1 with lr=0.1 → 0.8.
        let mut w = vec![1.0];
        let g = vec![2.0];
        sgd_step(&mut [&mut w], &[&g], 0.1, f64::INFINITY);
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clipping_halves_an_overlong_gradient() {
        // ||g|| = 10 with clip 5 → effective gradient halved.
        let mut w = vec![0.0, 0.0];
        let g = vec![6.0, 8.0];
        sgd_step(&mut [&mut w], &[&g], 1.0, 5.0);
        assert!((w[0] + 3.0).abs() < 1e-12);
        assert!((w[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn norm_spans_all_slices() {
        let a = vec![3.0];
        let b = vec![4.0];
        assert!((global_norm(&[&a, &b]) - 5.0).abs() < 1e-15);
    }
}
