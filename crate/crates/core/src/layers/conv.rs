use super::{LayerError, Linear, LinearSpec, ParamBuilder, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Graph, Var};

/// Valid (unpadded) strided 1D convolution over `[L × in_channels]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
}

impl Conv1dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(LayerError::Config(format!(
                "kernel ({}) and stride ({}) must be positive",
                self.kernel, self.stride
            )));
        }
        Ok(())
    }

    /// `floor((L − kernel)/stride) + 1`, or `None` when `L < kernel`.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    pub fn param_count(&self) -> u64 {
        (self.in_channels * self.kernel * self.out_channels
            + if self.bias { self.out_channels } else { 0 }) as u64
    }

    /// Depthwise `in·kernel` (+ `in` biases) followed by pointwise `in·out` (+ `out`).
    pub fn dws_param_count(&self) -> u64 {
        let bias = if self.bias {
            self.in_channels + self.out_channels
        } else {
            0
        };
        (self.in_channels * self.kernel + self.in_channels * self.out_channels + bias) as u64
    }
}

/// Weight layout `[out × (kernel·in)]`; column `j·in + c` multiplies input row
/// `t·stride + j`, channel `c`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub spec: Conv1dSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv1d {
    pub fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, spec: Conv1dSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.kernel * spec.in_channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = pb.uniform("weight", &[spec.out_channels, fan_in], bound);
        let bias = spec.bias.then(|| pb.zeros("bias", &[spec.out_channels]));
        Ok(Self { spec, weight, bias })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        let cols = x.unfold(self.spec.kernel, self.spec.stride)?;
        let mut y = cols.matmul_t(g.param(store, self.weight))?;
        if let Some(b) = self.bias {
            y = y.add_row(g.param(store, b))?;
        }
        Ok(y)
    }
}

/// Depthwise convolution (one `kernel`-tap filter per input channel) followed
/// by a pointwise projection to `out_channels`.
#[derive(Debug, Clone)]
pub struct DwsConv1d {
    pub spec: Conv1dSpec,
    pub depthwise: ParamId,
    pub depthwise_bias: Option<ParamId>,
    pub pointwise: Linear,
}

impl DwsConv1d {
    pub fn build<T: Scalar>(pb: &mut ParamBuilder<'_, T>, spec: Conv1dSpec) -> Result<Self> {
        spec.validate()?;
        let bound = 1.0 / (spec.kernel as f64).sqrt();
        let depthwise = pb.uniform("depthwise", &[spec.in_channels, spec.kernel], bound);
        let depthwise_bias = spec.bias.then(|| pb.zeros("depthwise_bias", &[spec.in_channels]));
        let pointwise = Linear::build(
            &mut pb.sub("pointwise"),
            LinearSpec {
                d_in: spec.in_channels,
                d_out: spec.out_channels,
                bias: spec.bias,
            },
        );
        Ok(Self {
            spec,
            depthwise,
            depthwise_bias,
            pointwise,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.depthwise];
        ids.extend(self.depthwise_bias);
        ids.extend(self.pointwise.base_ids());
        ids
    }

    pub fn depthwise_forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        let mut y = x.depthwise_conv(g.param(store, self.depthwise), self.spec.kernel, self.spec.stride)?;
        if let Some(b) = self.depthwise_bias {
            y = y.add_row(g.param(store, b))?;
        }
        Ok(y)
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
    ) -> tensor::Result<Var<'g, T>> {
        let d = self.depthwise_forward(g, store, x)?;
        self.pointwise.forward(g, store, d)
    }
}
