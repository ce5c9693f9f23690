//! Rewrites the region manifests in `fixtures/` from instrumented
//! fault-free runs over the fixture test set.
//!
//! ```text
//! cargo run -p crosslayer --example regen_manifests
//! ```

use crosslayer::workloads::cnn::Cnn;
use crosslayer::workloads::knn::{Knn, DEFAULT_K};
use crosslayer::workloads::mlp::Mlp;
use crosslayer::workloads::{weights, Model, WorkloadInstance};
use crosslayer::{fixture_dir, manifest, Dataset};

fn main() -> crosslayer::Result<()> {
    let dir = fixture_dir();
    let test = Dataset::load(&dir.join("test-images.idx3-ubyte"), &dir.join("test-labels.idx1-ubyte"))?;
    let train = Dataset::load(&dir.join("train-images.idx3-ubyte"), &dir.join("train-labels.idx1-ubyte"))?;
    let models = [
        Model::Cnn(Cnn::from_tensors(&weights::load(&dir.join("cnn.weights"))?)?),
        Model::Mlp(Mlp::from_tensors(&weights::load(&dir.join("mlp.weights"))?)?),
        Model::Knn(Knn::new(&train, DEFAULT_K)?),
    ];
    for model in models {
        let instance = WorkloadInstance::profiled(model, &test)?;
        let path = dir.join(instance.kind().manifest_file());
        std::fs::write(&path, manifest::format(instance.regions())).map_err(|e| crosslayer::Error::Io { path: path.clone(), source: e })?;
        println!("{}", path.display());
        for r in instance.regions().iter() {
            println!("  {:8} {:?} {:.4}", r.id, r.class, r.time_fraction);
        }
    }
    Ok(())
}
