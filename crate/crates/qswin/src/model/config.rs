use crate::error::{Error, Result};

/// How far shifted blocks roll the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftPolicy {
    /// `window_size / 2`, the standard choice.
    HalfWindow,
    /// A quarter of the stage's feature-map side. Note that at many
    /// resolutions this is a multiple of the window size, which makes the
    /// shift a pure window permutation.
    QuarterMap,
}

impl ShiftPolicy {
    pub fn parse(s: &str) -> Option<ShiftPolicy> {
        match s {
            "half_window" => Some(ShiftPolicy::HalfWindow),
            "quarter_map" => Some(ShiftPolicy::QuarterMap),
            _ => None,
        }
    }
}

/// Hierarchical windowed-transformer description.
#[derive(Debug, Clone)]
pub struct QSwinConfig {
    /// Square input side in pixels.
    pub input_resolution: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Blocks per stage.
    pub depths: Vec<usize>,
    /// Attention heads per stage.
    pub num_heads: Vec<usize>,
    /// Window side in tokens.
    pub window_size: usize,
    pub shift_policy: ShiftPolicy,
    /// Width of the feature head; the feature vector the siamese loss
    /// compares has this length.
    pub feature_dim: usize,
    /// Expansion ratio of the block MLPs.
    pub mlp_ratio: usize,
    /// Quadratic token projections when true; plain linear ones otherwise.
    pub quadratic: bool,
    /// Learned relative position bias inside window attention. Off by
    /// default: the attention form used here has none.
    pub rel_pos_bias: bool,
    pub layer_norm_eps: f32,
}

impl QSwinConfig {
    /// Desk-scale preset used throughout the test suite.
    pub fn tiny() -> QSwinConfig {
        QSwinConfig {
            input_resolution: 32,
            patch_size: 4,
            embed_dim: 16,
            depths: vec![1, 1],
            num_heads: vec![2, 2],
            window_size: 4,
            shift_policy: ShiftPolicy::HalfWindow,
            feature_dim: 8,
            mlp_ratio: 4,
            quadratic: true,
            rel_pos_bias: false,
            layer_norm_eps: 1e-5,
        }
    }

    /// Full-size layout: 224 input, patch 4, embed 96, depths {2,2,6,2},
    /// window 7, feature head of width 100.
    pub fn base224() -> QSwinConfig {
        QSwinConfig {
            input_resolution: 224,
            patch_size: 4,
            embed_dim: 96,
            depths: vec![2, 2, 6, 2],
            num_heads: vec![3, 6, 12, 24],
            window_size: 7,
            shift_policy: ShiftPolicy::HalfWindow,
            feature_dim: 100,
            mlp_ratio: 4,
            quadratic: true,
            rel_pos_bias: false,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    /// Token-grid side at stage `s`.
    pub fn stage_resolution(&self, stage: usize) -> usize {
        (self.input_resolution / self.patch_size) >> stage
    }

    /// Channel width at stage `s`.
    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn shift_for(&self, stage: usize) -> usize {
        let res = self.stage_resolution(stage);
        if res <= self.window_size {
            // A single global window leaves nothing to shift.
            return 0;
        }
        match self.shift_policy {
            ShiftPolicy::HalfWindow => self.window_size / 2,
            ShiftPolicy::QuarterMap => res / 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_resolution == 0 || !self.input_resolution.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "input resolution {} not divisible by patch size {}",
                self.input_resolution, self.patch_size
            )));
        }
        if self.depths.is_empty() {
            return Err(Error::Config("at least one stage required".into()));
        }
        if self.depths.len() != self.num_heads.len() {
            return Err(Error::Config(format!(
                "depths ({}) and num_heads ({}) must have equal length",
                self.depths.len(),
                self.num_heads.len()
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        for s in 0..self.num_stages() {
            let res = self.stage_resolution(s);
            if res == 0 {
                return Err(Error::Config(format!(
                    "stage {s} has no tokens left after merging"
                )));
            }
            if res > self.window_size && !res.is_multiple_of(self.window_size) {
                return Err(Error::Config(format!(
                    "stage {s} resolution {res} not divisible by window {}",
                    self.window_size
                )));
            }
            if res < self.window_size && s == 0 {
                return Err(Error::Config(format!(
                    "window {} larger than the stage-0 grid {res}",
                    self.window_size
                )));
            }
            let dim = self.stage_dim(s);
            if !dim.is_multiple_of(self.num_heads[s]) {
                return Err(Error::Config(format!(
                    "stage {s} width {dim} not divisible by {} heads",
                    self.num_heads[s]
                )));
            }
            if s + 1 < self.num_stages() && !res.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "stage {s} resolution {res} is odd and cannot be merged"
                )));
            }
        }
        Ok(())
    }

    /// Effective window side at a stage (grids smaller than the window fall
    /// back to one global window).
    pub fn window_for(&self, stage: usize) -> usize {
        self.window_size.min(self.stage_resolution(stage))
    }

    /// Key=value lines for the checkpoint header and config files.
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| {
            v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        };
        format!(
            "model.input_resolution={}\nmodel.patch_size={}\nmodel.embed_dim={}\n\
             model.depths={}\nmodel.num_heads={}\nmodel.window_size={}\n\
             model.shift_policy={}\nmodel.feature_dim={}\nmodel.mlp_ratio={}\n\
             model.quadratic={}\nmodel.rel_pos_bias={}\nmodel.layer_norm_eps={}\n",
            self.input_resolution,
            self.patch_size,
            self.embed_dim,
            join(&self.depths),
            join(&self.num_heads),
            self.window_size,
            match self.shift_policy {
                ShiftPolicy::HalfWindow => "half_window",
                ShiftPolicy::QuarterMap => "quarter_map",
            },
            self.feature_dim,
            self.mlp_ratio,
            self.quadratic,
            self.rel_pos_bias,
            self.layer_norm_eps,
        )
    }

    /// Apply one `model.*` key from a config file.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad integer {v:?} for {key}")))
        };
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad list {v:?} for {key}")))
                })
                .collect()
        };
        match key {
            "input_resolution" => self.input_resolution = parse_usize(value)?,
            "patch_size" => self.patch_size = parse_usize(value)?,
            "embed_dim" => self.embed_dim = parse_usize(value)?,
            "depths" => self.depths = parse_list(value)?,
            "num_heads" => self.num_heads = parse_list(value)?,
            "window_size" => self.window_size = parse_usize(value)?,
            "shift_policy" => {
                self.shift_policy = ShiftPolicy::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown shift policy {value:?}")))?
            }
            "feature_dim" => self.feature_dim = parse_usize(value)?,
            "mlp_ratio" => self.mlp_ratio = parse_usize(value)?,
            "quadratic" => {
                self.quadratic = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad bool {value:?} for {key}")))?
            }
            "rel_pos_bias" => {
                self.rel_pos_bias = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad bool {value:?} for {key}")))?
            }
            "layer_norm_eps" => {
                self.layer_norm_eps = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad float {value:?} for {key}")))?
            }
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }
}
