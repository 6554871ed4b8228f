use crate::encoder::linear;
use crate::{Graph, ParamId, ParamStore, Result, RngStream, Tensor, Var};

pub const PROJECTION_PREFIX: &str = "proj.";

/// Two dense layers with a ReLU between them: `z = W2 relu(W1 h + b1) + b2`.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    pub d_model: usize,
    pub d_hidden: usize,
    pub d_proj: usize,
}

impl ProjectionHead {
    /// Weights `~ Normal(0, 1/fan_in)`, biases zero.
    pub fn init(
        store: &mut ParamStore,
        d_model: usize,
        d_hidden: usize,
        d_proj: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut weight = |rows: usize, cols: usize| {
            let std = 1.0 / (rows as f64).sqrt();
            Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal(0.0, std)).collect())
        };
        store.add("proj.fc1.weight", weight(d_model, d_hidden)?)?;
        store.add("proj.fc1.bias", Tensor::zeros(&[d_hidden]))?;
        store.add("proj.fc2.weight", weight(d_hidden, d_proj)?)?;
        store.add("proj.fc2.bias", Tensor::zeros(&[d_proj]))?;
        Self::bind(store)
    }

    /// Finds an existing head in `store`; widths are read from the shapes.
    pub fn bind(store: &ParamStore) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| crate::Error::config(format!("missing parameter {name}")))
        };
        let w1 = get("proj.fc1.weight")?;
        let w2 = get("proj.fc2.weight")?;
        let (d_model, d_hidden) = store.get(w1).value.dims2()?;
        let (h2, d_proj) = store.get(w2).value.dims2()?;
        if h2 != d_hidden {
            return Err(crate::Error::config("projection head layer widths disagree"));
        }
        Ok(ProjectionHead {
            fc1: (w1, get("proj.fc1.bias")?),
            fc2: (w2, get("proj.fc2.bias")?),
            d_model,
            d_hidden,
            d_proj,
        })
    }

    /// Projection before normalization.
    pub fn project_raw(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let a = linear(g, store, h, self.fc1)?;
        let a = g.relu(a);
        linear(g, store, a, self.fc2)
    }

    /// Unit-norm projections; a zero pre-normalization row is a degenerate input.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let z = self.project_raw(g, store, h)?;
        g.l2_normalize_rows(z)
    }
}
