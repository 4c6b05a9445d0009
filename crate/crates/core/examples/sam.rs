//! Sharpness-aware gradients: the closed-form scalar case, then SAM
//! fine-tuning against plain fine-tuning on the same stream.

use flatbasin::landscape::{sharpness, SharpnessConfig};
use flatbasin::methods::{train_sequence, MethodConfig};
use flatbasin::model::{Activation, Batch, HeadSpec, InitScheme, MlpSpec, ModelState};
use flatbasin::numcore::{ParamVector, RngStream};
use flatbasin::sam::{sam_gradient, SamConfig};
use flatbasin::tasks::gen_split_blobs;

fn main() -> flatbasin::Result<()> {
    let square = |x: &ParamVector| Ok((x.dot(x), x.scale(2.0)));
    let g = sam_gradient(square, &ParamVector::from_values(vec![3.0]), &SamConfig::default())?;
    println!("f(x) = x², x = 3, rho = 0.05: SAM gradient {:.4} (plain 6.0)", g.grad.values[0]);

    let stream = gen_split_blobs(5, 2, 20, 200, 2.0, 1.0, 1)?;
    let spec = MlpSpec {
        input_dim: stream.dim(),
        hidden_dims: vec![16, 16],
        activation: Activation::Tanh,
        heads: stream.tasks.iter().map(|t| HeadSpec { task: t.task, classes: t.classes }).collect(),
    };
    let start = ModelState::init(spec, &mut RngStream::derive(1, "init"), InitScheme::UniformGlorot)?;
    let plain = MethodConfig { lr: 0.1, epochs: 20, ..MethodConfig::default() };
    for cfg in [plain.clone(), plain.with_sam(SamConfig { rho: 0.05, weight_decay: 0.0 })] {
        let mut model = start.clone();
        let log = train_sequence(&mut model, &stream, &cfg, &RngStream::derive(1, "train"))?;
        let mut phi = 0.0;
        for (task, w) in stream.tasks.iter().zip(&log.snapshots) {
            let batch = Batch::new(&task.train, task.task);
            phi += sharpness(|x| model.loss_and_grad_at(x, &batch), w, &SharpnessConfig::default())?.phi;
        }
        println!("{:<13} mean sharpness at task minima {:.4}", cfg.label(), phi / stream.tasks.len() as f64);
    }
    Ok(())
}
