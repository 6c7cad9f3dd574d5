use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamSet;

/// Square-kernel convolution whose weights live in a [`ParamSet`] under
/// `<name>.weight` / `<name>.bias`. Padding is `k / 2` ("same" for stride 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Conv2d {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
        }
    }

    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.init_conv(&self.name, self.cout, self.cin, self.k, rng)
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, &format!("{}.weight", self.name))?;
        let b = g.param(params, &format!("{}.bias", self.name))?;
        g.conv2d(x, w, b, self.stride, self.pad())
    }
}

/// `relu(conv2(relu(conv1(x))) + x)` with two same-padded 3×3 convolutions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new(name: &str, channels: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(format!("{name}.conv1"), channels, channels, 3, 1),
            conv2: Conv2d::new(format!("{name}.conv2"), channels, channels, 3, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        self.conv1.init(params, rng)?;
        self.conv2.init(params, rng)
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, params, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, params, h)?;
        let s = g.add(h, x)?;
        Ok(g.relu(s))
    }
}
