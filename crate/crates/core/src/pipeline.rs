//! End-to-end estimation: features, correlation, pyramid, refinement.

use crate::blocks::{extract_pair_features, ImagePair};
use crate::config::ModelConfig;
use crate::error::{Error, Result, StageExt};
use crate::matching::{
    build_disparity_volume, build_flow_volume, build_pyramid, iterate_disparity_multires, iterate_flow,
    FieldEstimate, FieldKind,
};
use crate::params::Params;
use crate::tensor::Scalar;
use crate::weights::ModelWeights;

/// One estimation job. For disparity the images are a rectified stereo pair
/// (left is the reference); for flow they are consecutive frames.
#[derive(Clone, Debug)]
pub struct TaskRequest<T> {
    pub task: FieldKind,
    pub images: ImagePair<T>,
    pub iterations: usize,
    pub radius: usize,
}

impl<T: Scalar> TaskRequest<T> {
    /// A request using the configured iteration count and lookup radius.
    pub fn with_defaults(task: FieldKind, images: ImagePair<T>, cfg: &ModelConfig) -> Self {
        let iterations = match task {
            FieldKind::Flow => cfg.matching.flow_iters,
            FieldKind::Disparity => cfg.matching.disparity_iters,
        };
        Self {
            task,
            images,
            iterations,
            radius: cfg.matching.radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimation<T> {
    /// The last iterate at full resolution.
    pub field: FieldEstimate<T>,
    /// Every iterate at full resolution, first to last.
    pub iterations: Vec<FieldEstimate<T>>,
}

/// Parameters resolved to one element type and checked against the config.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    params: Params<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(weights: &ModelWeights) -> Result<Self> {
        weights.config().validate()?;
        let params = weights.params().stage("model assembly")?;
        Ok(Self {
            config: weights.config().clone(),
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        params.check(&config).stage("model assembly")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn estimate(&self, req: &TaskRequest<T>) -> Result<Estimation<T>> {
        let cfg = &self.config;
        if req.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if req.radius != cfg.matching.radius {
            return Err(Error::Config(format!(
                "lookup radius {} differs from the radius {} the weights were built for",
                req.radius, cfg.matching.radius
            )));
        }
        let feats = extract_pair_features(&req.images, cfg, &self.params).stage("feature extraction")?;
        let levels = cfg.matching.num_levels;
        let iterations = match req.task {
            FieldKind::Flow => {
                let vol = build_flow_volume(&feats.f_left, &feats.f_right).stage("correlation volume")?;
                let pyr = build_pyramid(vol, FieldKind::Flow, levels).stage("correlation pyramid")?;
                iterate_flow(&pyr, &feats.context, req.iterations, req.radius, cfg, &self.params)
                    .stage("flow refinement")?
            }
            FieldKind::Disparity => {
                let vol = build_disparity_volume(&feats.f_left, &feats.f_right).stage("correlation volume")?;
                let pyr = build_pyramid(vol, FieldKind::Disparity, levels).stage("correlation pyramid")?;
                iterate_disparity_multires(&pyr, &feats.context, req.iterations, req.radius, cfg, &self.params)
                    .stage("disparity refinement")?
            }
        };
        let field = iterations.last().cloned().expect("at least one iteration");
        Ok(Estimation { field, iterations })
    }
}

/// Assembles a model from `weights` and runs one request.
pub fn estimate<T: Scalar>(req: &TaskRequest<T>, weights: &ModelWeights) -> Result<Estimation<T>> {
    Model::new(weights)?.estimate(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::weights::init_weights;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.block.embed_dim = 8;
        cfg.block.state_dim = 4;
        cfg.block.num_heads = 2;
        cfg.block.num_blocks = 1;
        cfg.block.context_dim = 12;
        cfg.matching.hidden_dim = 4;
        cfg.matching.motion_dim = 4;
        cfg.matching.num_levels = 2;
        cfg.matching.radius = 1;
        cfg.matching.flow_iters = 2;
        cfg.matching.disparity_iters = 2;
        cfg
    }

    fn pair(h: usize, w: usize) -> ImagePair<f32> {
        let img = |phase: f64| {
            Tensor::from_fn([3, h, w], |k| ((k as f64 * 0.13 + phase).sin() * 0.9) as f32).unwrap()
        };
        ImagePair::new(img(0.0), img(0.4)).unwrap()
    }

    #[test]
    fn output_shapes_and_determinism() {
        let cfg = tiny_cfg();
        let w = init_weights(&cfg, 0);
        let model = Model::<f32>::new(&w).unwrap();
        for task in [FieldKind::Flow, FieldKind::Disparity] {
            let req = TaskRequest::with_defaults(task, pair(32, 32), &cfg);
            let a = model.estimate(&req).unwrap();
            assert_eq!(a.iterations.len(), 2);
            assert_eq!(a.field.values().shape(), &[task.channels(), 32, 32]);
            assert!(a.field.values().is_finite());
            if task == FieldKind::Disparity {
                assert!(a.field.values().data().iter().all(|&v| v >= 0.0));
            }
            let b = model.estimate(&req).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn radius_mismatch_is_config_error() {
        let cfg = tiny_cfg();
        let w = init_weights(&cfg, 0);
        let mut req = TaskRequest::with_defaults(FieldKind::Flow, pair(32, 32), &cfg);
        req.radius = 2;
        assert!(matches!(estimate(&req, &w), Err(Error::Config(_))));
    }

    #[test]
    fn failures_name_the_stage() {
        let cfg = tiny_cfg();
        let mut w = init_weights(&cfg, 0);
        w.remove("disp.gru0.convq.weight");
        let err = Model::<f32>::new(&w).unwrap_err();
        assert!(err.to_string().contains("model assembly"), "{err}");
        assert!(matches!(err.root(), Error::MissingTensor(n) if n == "disp.gru0.convq.weight"));

        // extents not divisible by the patch size
        let w = init_weights(&cfg, 0);
        let req = TaskRequest::with_defaults(FieldKind::Flow, pair(30, 32), &cfg);
        let err = estimate(&req, &w).unwrap_err();
        assert!(err.to_string().contains("feature extraction"), "{err}");
        assert!(matches!(err.root(), Error::Dimension(_)));

        // a grid too small for the pyramid
        let req = TaskRequest::with_defaults(FieldKind::Flow, pair(4, 8), &cfg);
        let err = estimate(&req, &w).unwrap_err();
        assert!(err.to_string().contains("correlation pyramid"), "{err}");
    }
}
