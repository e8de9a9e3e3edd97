//! Full-model gradient check: backprop through the compact network must
//! agree with central finite differences through the public API alone
//! (state_entries / load_state / forward / backward).

use planeshift_core::model::layers::softmax_cross_entropy;
use planeshift_core::model::{DenseNet, DenseNetConfig, Mode, Tensor4};
use planeshift_core::seed::rng_for;
use rand::Rng;

fn loss_of(model: &mut DenseNet, x: &Tensor4, labels: &[usize]) -> f64 {
    // Batch statistics without mutating running stats, matching what the
    // analytic backward pass differentiates.
    let (logits, _) = model.forward(x, Mode::Train { update_stats: false });
    let (loss, _, _) = softmax_cross_entropy(&logits, labels.len(), model.cfg.num_classes, labels);
    loss
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut model = DenseNet::new(DenseNetConfig::desk_small(5), 42);
    let mut rng = rng_for(7);
    let n = 2;
    let mut x = Tensor4::zeros(n, 1, 16, 16);
    for v in x.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let labels = vec![1usize, 3];

    let (logits, tape) = model.forward(&x, Mode::Train { update_stats: false });
    let (_, grad_logits, _) = softmax_cross_entropy(&logits, n, 5, &labels);
    let grads = model.backward(&tape, &grad_logits);

    let entries = model.state_entries();
    let mut pert = entries.clone();
    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    for (ei, e) in entries.iter().enumerate() {
        if e.buffer {
            continue;
        }
        let key = format!("{}/{}", e.group, e.name);
        let g = grads.get(&key).unwrap_or_else(|| panic!("no gradient for {key}"));
        let mut indices = vec![0usize];
        if e.values.len() > 1 {
            indices.push(e.values.len() / 2);
        }
        for idx in indices {
            let analytic = g[idx];
            let orig = e.values[idx];
            // The step is applied in f32, so measure the step that
            // actually landed rather than the one requested.
            let step = (orig.abs() * 1e-3).max(1e-4) as f32;
            let vp = orig + step;
            let vm = orig - step;
            let actual_h = (vp as f64 - vm as f64) / 2.0;

            pert[ei].values[idx] = vp;
            model.load_state(&pert, true).unwrap();
            let lp = loss_of(&mut model, &x, &labels);
            pert[ei].values[idx] = vm;
            model.load_state(&pert, true).unwrap();
            let lm = loss_of(&mut model, &x, &labels);
            pert[ei].values[idx] = orig;

            let fd = (lp - lm) / (2.0 * actual_h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
            assert!(
                rel < 1e-3,
                "{key}[{idx}]: analytic {analytic:.3e} vs fd {fd:.3e} (rel {rel:.3e})"
            );
            if rel > worst.0 {
                worst = (rel, format!("{key}[{idx}]"));
            }
            checked += 1;
        }
    }
    model.load_state(&entries, true).unwrap();
    assert!(checked >= 20, "only {checked} scalars checked");
    println!("checked {checked} scalars; worst relative error {:.3e} at {}", worst.0, worst.1);
}
