use hmmsel::truth::*;
fn compact(g: usize) -> TruthModel {
    TruthModel::CompactKernel(CompactKernelTruth {
        amplitude: 0.5,
        emission: SmoothEmissionFamily::GaussianRamp { mean0: -1.5, mean1: 1.5, sd: 0.8 },
        grid_size: g,
        burn_in: 50,
    })
}
fn main() {
    let ys = compact(16).simulate(40, 8).unwrap();
    let reference = compact(2048).conditional_log_density(&ys).unwrap();
    for g in [32usize, 64, 128, 256, 512, 1024] {
        let v = compact(g).conditional_log_density(&ys).unwrap();
        println!("G={g:5} value={v:.12} err={:.3e}", (v - reference).abs());
    }
}
