use alloc::format;
use alloc::vec;

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::tensor::ConvGeometry;

/// A convolution whose weight and bias live in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        geometry: ConvGeometry,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let g = geometry;
        let weight = store.register(
            format!("{name}.weight"),
            group,
            vec![g.out_channels, g.in_channels, g.kernel, g.kernel],
            g.fan_in(),
            init,
            rng,
        );
        let bias = store.register(
            format!("{name}.bias"),
            group,
            vec![g.out_channels],
            g.fan_in(),
            Init::Zeros,
            rng,
        );
        Self {
            weight,
            bias,
            geometry,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.conv(x, self)
    }

    /// `relu(conv(x))`
    pub fn forward_relu(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let y = g.conv(x, self);
        g.relu(y)
    }
}
