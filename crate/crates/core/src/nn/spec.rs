use std::fmt;
use std::str::FromStr;

use crate::data::ImageShape;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Output (height, width) for an input of the given size, or `None` if
    /// the kernel does not fit.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let ph = height + 2 * self.pad;
        let pw = width + 2 * self.pad;
        if self.kernel == 0 || self.stride == 0 || self.kernel > ph || self.kernel > pw {
            return None;
        }
        Some(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layer {
    Dense { input: usize, output: usize },
    Conv(ConvGeometry),
    Relu,
    Dropout { rate: f64 },
    Flatten,
}

impl Layer {
    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output } => input * output,
            Layer::Conv(g) => g.out_channels * g.in_channels * g.kernel * g.kernel,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Conv(g) => g.out_channels,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Conv(g) => g.in_channels * g.kernel * g.kernel,
            _ => 0,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { input, output } => write!(f, "dense({input},{output})"),
            Layer::Conv(g) => write!(
                f,
                "conv({},{},{},{},{})",
                g.in_channels, g.out_channels, g.kernel, g.stride, g.pad
            ),
            Layer::Relu => f.write_str("relu"),
            Layer::Dropout { rate } => write!(f, "dropout({rate})"),
            Layer::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(Error::config(format!("bad layer syntax `{s}`"))),
            None => (s, None),
        };
        let ints = |want: usize| -> Result<Vec<usize>> {
            let raw = args.ok_or_else(|| Error::config(format!("`{name}` needs arguments")))?;
            let vals = raw
                .split(',')
                .map(|a| a.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("`{s}`: {e}")))?;
            if vals.len() != want {
                return Err(Error::config(format!("`{name}` takes {want} arguments")));
            }
            Ok(vals)
        };
        match name {
            "dense" => {
                let v = ints(2)?;
                Ok(Layer::Dense { input: v[0], output: v[1] })
            }
            "conv" => {
                let v = ints(5)?;
                Ok(Layer::Conv(ConvGeometry {
                    in_channels: v[0],
                    out_channels: v[1],
                    kernel: v[2],
                    stride: v[3],
                    pad: v[4],
                }))
            }
            "dropout" => {
                let rate = args
                    .ok_or_else(|| Error::config("`dropout` needs a rate"))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("`{s}`: {e}")))?;
                Ok(Layer::Dropout { rate })
            }
            "relu" if args.is_none() => Ok(Layer::Relu),
            "flatten" if args.is_none() => Ok(Layer::Flatten),
            _ => Err(Error::config(format!("unknown layer `{s}`"))),
        }
    }
}

/// Shape of the activation flowing between two layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Spatial(ImageShape),
    Flat(usize),
}

impl Activation {
    pub fn len(&self) -> usize {
        match self {
            Activation::Spatial(s) => s.len(),
            Activation::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer topology of a classifier over fixed-size images.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub input: ImageShape,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
}

pub const PRESET_NAMES: [&str; 4] = ["small-conv", "linear-softmax", "mlp", "conv-check"];

impl ModelSpec {
    pub fn new(name: impl Into<String>, input: ImageShape, layers: Vec<Layer>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            input,
            layers,
            num_classes,
        };
        spec.activations()?;
        Ok(spec)
    }

    /// Builds a named topology for the given input geometry.
    ///
    /// * `small-conv`: conv 3x3 to 16 channels, relu, conv 3x3 stride 2 to
    ///   32 channels, relu, flatten, dropout 0.5, dense to the classes.
    /// * `linear-softmax`: flatten then a single dense layer.
    /// * `mlp`: one hidden layer of 32 units with dropout 0.5.
    /// * `conv-check`: a tiny conv, relu and dense net for gradient checks.
    pub fn preset(name: &str, input: ImageShape, num_classes: usize) -> Result<Self> {
        let c = input.channels;
        let conv = |in_channels, out_channels, stride| {
            Layer::Conv(ConvGeometry {
                in_channels,
                out_channels,
                kernel: 3,
                stride,
                pad: 1,
            })
        };
        let layers = match name {
            "small-conv" => {
                let g1 = ConvGeometry { in_channels: c, out_channels: 16, kernel: 3, stride: 1, pad: 1 };
                let (h1, w1) = g1.output_size(input.height, input.width).ok_or_else(|| {
                    Error::config(format!("input {input} too small for small-conv"))
                })?;
                let g2 = ConvGeometry { in_channels: 16, out_channels: 32, kernel: 3, stride: 2, pad: 1 };
                let (h2, w2) = g2
                    .output_size(h1, w1)
                    .ok_or_else(|| Error::config(format!("input {input} too small for small-conv")))?;
                vec![
                    Layer::Conv(g1),
                    Layer::Relu,
                    Layer::Conv(g2),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Dropout { rate: 0.5 },
                    Layer::Dense { input: 32 * h2 * w2, output: num_classes },
                ]
            }
            "linear-softmax" => vec![
                Layer::Flatten,
                Layer::Dense { input: input.len(), output: num_classes },
            ],
            "mlp" => vec![
                Layer::Flatten,
                Layer::Dense { input: input.len(), output: 32 },
                Layer::Relu,
                Layer::Dropout { rate: 0.5 },
                Layer::Dense { input: 32, output: num_classes },
            ],
            "conv-check" => {
                let g = ConvGeometry { in_channels: c, out_channels: 2, kernel: 3, stride: 1, pad: 1 };
                let (h, w) = g
                    .output_size(input.height, input.width)
                    .ok_or_else(|| Error::config(format!("input {input} too small for conv-check")))?;
                vec![
                    conv(c, 2, 1),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Dense { input: 2 * h * w, output: num_classes },
                ]
            }
            other => {
                return Err(Error::config(format!(
                    "unknown model spec `{other}` (expected one of {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Self::new(name, input, layers, num_classes)
    }

    /// Resolves either a preset name or a full textual description.
    pub fn resolve(name_or_description: &str, input: ImageShape, num_classes: usize) -> Result<Self> {
        if name_or_description.contains(';') {
            let spec: ModelSpec = name_or_description.parse()?;
            if spec.input != input || spec.num_classes != num_classes {
                return Err(Error::config(format!(
                    "model spec expects {} inputs and {} classes, dataset has {input} and {num_classes}",
                    spec.input, spec.num_classes
                )));
            }
            Ok(spec)
        } else {
            Self::preset(name_or_description, input, num_classes)
        }
    }

    /// Same topology with every dropout rate set to zero.
    pub fn without_dropout(&self) -> Self {
        let mut spec = self.clone();
        for layer in &mut spec.layers {
            if let Layer::Dropout { rate } = layer {
                *rate = 0.0;
            }
        }
        spec
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Activation shapes: entry `i` is the input of layer `i`, the last
    /// entry is the network output.
    pub fn activations(&self) -> Result<Vec<Activation>> {
        if self.input.is_empty() {
            return Err(Error::structural("empty input shape"));
        }
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = Activation::Spatial(self.input);
        shapes.push(cur);
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::structural(format!("layer {i} ({layer}): {msg}"));
            cur = match (*layer, cur) {
                (Layer::Dense { input, output }, Activation::Flat(n)) => {
                    if input != n {
                        return Err(bad(format!("expects {input} inputs, receives {n}")));
                    }
                    if output == 0 {
                        return Err(bad("zero outputs".into()));
                    }
                    Activation::Flat(output)
                }
                (Layer::Dense { .. }, Activation::Spatial(_)) => {
                    return Err(bad("dense layer needs a flatten before it".into()))
                }
                (Layer::Conv(g), Activation::Spatial(s)) => {
                    if g.in_channels != s.channels {
                        return Err(bad(format!("expects {} channels, receives {}", g.in_channels, s.channels)));
                    }
                    let (h, w) = g
                        .output_size(s.height, s.width)
                        .ok_or_else(|| bad(format!("kernel does not fit {s}")))?;
                    if g.out_channels == 0 {
                        return Err(bad("zero output channels".into()));
                    }
                    Activation::Spatial(ImageShape::new(g.out_channels, h, w))
                }
                (Layer::Conv(_), Activation::Flat(_)) => return Err(bad("conv after flatten".into())),
                (Layer::Dropout { rate }, a) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("rate {rate} outside [0, 1)")));
                    }
                    a
                }
                (Layer::Relu, a) => a,
                (Layer::Flatten, a) => Activation::Flat(a.len()),
            };
            shapes.push(cur);
        }
        match cur {
            Activation::Flat(n) if n == self.num_classes => Ok(shapes),
            other => Err(Error::structural(format!(
                "network output {other:?} does not match {} classes",
                self.num_classes
            ))),
        }
    }
}

/// `name=<n>;input=CxHxW;layers=<l1> <l2> ...;classes=<k>`
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layers: Vec<String> = self.layers.iter().map(Layer::to_string).collect();
        write!(
            f,
            "name={};input={};layers={};classes={}",
            self.name,
            self.input,
            layers.join(" "),
            self.num_classes
        )
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut layers = None;
        let mut classes = None;
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("model spec field `{part}` lacks `=`")))?;
            match key.trim() {
                "name" => name = Some(value.trim().to_string()),
                "input" => {
                    let dims = value
                        .trim()
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::config(format!("input `{value}`: {e}")))?;
                    if dims.len() != 3 {
                        return Err(Error::config(format!("input `{value}` is not CxHxW")));
                    }
                    input = Some(ImageShape::new(dims[0], dims[1], dims[2]));
                }
                "layers" => {
                    layers = Some(
                        value
                            .split_whitespace()
                            .map(str::parse)
                            .collect::<Result<Vec<Layer>>>()?,
                    )
                }
                "classes" => {
                    classes = Some(
                        value
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| Error::config(format!("classes `{value}`: {e}")))?,
                    )
                }
                other => return Err(Error::config(format!("unknown model spec field `{other}`"))),
            }
        }
        ModelSpec::new(
            name.unwrap_or_else(|| "custom".into()),
            input.ok_or_else(|| Error::config("model spec lacks `input`"))?,
            layers.ok_or_else(|| Error::config("model spec lacks `layers`"))?,
            classes.ok_or_else(|| Error::config("model spec lacks `classes`"))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CIFAR_SHAPE;

    #[test]
    fn dense_param_count() {
        let spec = ModelSpec::new(
            "d",
            ImageShape::new(1, 1, 4),
            vec![Layer::Flatten, Layer::Dense { input: 4, output: 3 }],
            3,
        )
        .unwrap();
        assert_eq!(spec.param_count(), 15);
    }

    #[test]
    fn small_conv_on_cifar() {
        let spec = ModelSpec::preset("small-conv", CIFAR_SHAPE, 10).unwrap();
        let shapes = spec.activations().unwrap();
        assert_eq!(shapes[1], Activation::Spatial(ImageShape::new(16, 32, 32)));
        assert_eq!(shapes[3], Activation::Spatial(ImageShape::new(32, 16, 16)));
        assert_eq!(spec.layers[6], Layer::Dense { input: 8192, output: 10 });
        assert_eq!(spec.param_count(), (16 * 27 + 16) + (32 * 144 + 32) + (8192 * 10 + 10));
    }

    #[test]
    fn description_round_trips() {
        for name in PRESET_NAMES {
            let spec = ModelSpec::preset(name, ImageShape::new(3, 8, 8), 2).unwrap();
            let back: ModelSpec = spec.to_string().parse().unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn structural_errors() {
        let shape = ImageShape::new(1, 2, 2);
        let mismatch = ModelSpec::new("x", shape, vec![Layer::Flatten, Layer::Dense { input: 5, output: 2 }], 2);
        assert!(matches!(mismatch, Err(Error::Structural(_))));
        let wrong_classes = ModelSpec::new("x", shape, vec![Layer::Flatten, Layer::Dense { input: 4, output: 2 }], 3);
        assert!(wrong_classes.is_err());
        let no_flatten = ModelSpec::new("x", shape, vec![Layer::Dense { input: 4, output: 2 }], 2);
        assert!(no_flatten.is_err());
        let bad_dropout = ModelSpec::new(
            "x",
            shape,
            vec![Layer::Flatten, Layer::Dropout { rate: 1.0 }, Layer::Dense { input: 4, output: 2 }],
            2,
        );
        assert!(bad_dropout.is_err());
        assert!(ModelSpec::preset("vgg16", shape, 2).is_err());
    }

    #[test]
    fn resolve_checks_dataset_geometry() {
        let shape = ImageShape::new(3, 8, 8);
        let text = ModelSpec::preset("mlp", shape, 2).unwrap().to_string();
        assert!(ModelSpec::resolve(&text, shape, 2).is_ok());
        assert!(ModelSpec::resolve(&text, shape, 3).is_err());
        assert_eq!(ModelSpec::resolve("mlp", shape, 2).unwrap().name, "mlp");
    }
}
