//! Largest Hessian eigenvalue at a task minimum and the second-order
//! bound on how much that task's loss grows while learning the next one.

use flatbasin::landscape::{hessian_vector_product, verify_forgetting_bound, PowerIterationConfig};
use flatbasin::methods::{train_sequence, MethodConfig};
use flatbasin::model::{Activation, Batch, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::RngStream;
use flatbasin::tasks::gen_split_blobs;

fn main() -> flatbasin::Result<()> {
    let stream = gen_split_blobs(2, 2, 8, 100, 3.0, 1.0, 5)?;
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![8],
        activation: Activation::Tanh,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let mut model = ModelState::init(spec, &mut RngStream::derive(5, "init"), InitScheme::UniformGlorot)?;
    let cfg = MethodConfig { lr: 0.1, epochs: 20, ..MethodConfig::default() };
    let log = train_sequence(&mut model, &stream, &cfg, &RngStream::derive(5, "train"))?;

    let first = &stream.tasks[0];
    let batch = Batch::new(&first.train, first.task);
    let (w1, w2) = (&log.snapshots[0], &log.snapshots[1]);
    let grad = |w: &_| model.loss_and_grad_at(w, &batch).map(|(_, g)| g);
    let hvp = |v: &_| hessian_vector_product(grad, w1, v, 1e-4);
    let power = PowerIterationConfig { iters: 300, tol: 1e-8, seed: 5 };
    let r = verify_forgetting_bound(|w| model.loss_at(w, &first.train, first.task), w1, w2, hvp, &power)?;

    println!("lambda_max          {:.5} (converged: {})", r.lambda_max, r.curvature_converged);
    println!("L(w2) - L(w1)       {:.5}", r.lhs);
    println!("½ Δwᵀ H Δw          {:.5}", r.quadratic_term);
    println!("½ λ_max ‖Δw‖²       {:.5} (holds: {})", r.bound, r.bound_holds);
    println!("third-order and up  {:.5}", r.approximation_gap);
    Ok(())
}
