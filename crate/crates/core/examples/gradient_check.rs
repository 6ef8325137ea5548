//! Compares the hand-written backward pass of the default U-Net with central
//! finite differences, in f64, on an 8×8 input.

use rand::Rng;

use diffsr::denoiser::{loss_and_grad, ArchitectureConfig, TrainingExample, UNet};
use diffsr::image::{ImageTensor, Range};
use diffsr::rng::stream_rng;

fn main() -> diffsr::Result<()> {
    let net = UNet::new(ArchitectureConfig::default(), 1000)?;
    println!("default U-Net: {} parameters", ArchitectureConfig::default().parameter_count());
    let mut params = net.init_params::<f64>(1);
    let mut r = stream_rng(2, 0);
    // break the zero-initialized output conv so gradients reach every layer
    let id = params.find("conv_out.weight").expect("output conv");
    params.get_mut(id).iter_mut().for_each(|v| *v = r.gen_range(-0.05..0.05));

    let mut img = || ImageTensor::new(3, 8, 8, (0..192).map(|_| r.gen_range(-1.0..1.0)).collect(), Range::Signed);
    let batch = vec![TrainingExample {
        id: "x".into(),
        x_t: img()?,
        t: 400,
        condition: img()?,
        target: img()?,
    }];
    let (loss, grads) = loss_and_grad(&net, &params, &batch)?;
    println!("loss {loss:.6}\n");
    println!("{:<28}  {:>13}  {:>13}  {:>9}", "parameter", "analytic", "numeric", "rel err");
    let h = 1e-4;
    let picks = ["time.0.weight", "conv_in.weight", "down.0.0.norm1.gamma", "down.1.0.conv2.weight", "mid.temb.bias", "up.0.0.skip.weight", "norm_out.beta", "conv_out.bias"];
    for name in picks {
        let Some(id) = params.find(name) else { continue };
        let k = params.get(id).len() / 3;
        let orig = params.get(id)[k];
        params.get_mut(id)[k] = orig + h;
        let up = loss_and_grad(&net, &params, &batch)?.0;
        params.get_mut(id)[k] = orig - h;
        let down = loss_and_grad(&net, &params, &batch)?.0;
        params.get_mut(id)[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(id)[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        println!("{:<28}  {analytic:>13.5e}  {numeric:>13.5e}  {rel:>9.2e}", format!("{name}[{k}]"));
    }
    Ok(())
}
