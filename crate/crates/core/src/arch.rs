//! Dense encoder-decoder architecture descriptors.
//!
//! A descriptor has a down path of three dense blocks separated by two stride-2
//! pooling transitions, an up path of three dense blocks separated by two
//! scale-2 bilinear transitions, and a convolution + softmax head whose filter
//! count is the number of classes.
//!
//! Each block layer is `Conv(BN(Swish(x)))` with a learnable per-layer Swish
//! beta. Inside a block, layer `l` consumes the concatenation of the block
//! input and the outputs of layers `1..l`; the block emits the output of its
//! last layer only. Transitions have no weights and keep the channel count.
//!
//! Naming note: the down path is the downsampling half (called "decoder" in
//! some write-ups of this architecture), the up path the upsampling half.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{
    DimensionKind, PolicyVector, PoolingType, SearchSpace, BLOCKS, LAYERS_PER_BLOCK,
};

pub const ARCH_FORMAT: &str = "gridpg-arch";
pub const ARCH_VERSION: u32 = 1;

/// Filter counts per block of the expert-designed baseline.
pub const EXPERT_GROWTH: [u32; BLOCKS] = [32, 64, 128, 128, 64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub num_filters: u32,
    pub filter_h: u32,
    pub filter_w: u32,
}

impl LayerSpec {
    pub fn new(num_filters: u32, filter_h: u32, filter_w: u32) -> Self {
        LayerSpec {
            num_filters,
            filter_h,
            filter_w,
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.num_filters == 0 {
            return Err(Error::Shape(format!("{what}: zero filters")));
        }
        for (axis, k) in [("height", self.filter_h), ("width", self.filter_w)] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Shape(format!(
                    "{what}: filter {axis} {k} must be odd and positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBlockSpec {
    pub layers: [LayerSpec; LAYERS_PER_BLOCK],
}

impl DenseBlockSpec {
    pub fn uniform(layer: LayerSpec) -> Self {
        DenseBlockSpec {
            layers: [layer; LAYERS_PER_BLOCK],
        }
    }

    /// Channels leaving the block: the last layer's filters.
    pub fn output_channels(&self) -> u32 {
        self.layers[LAYERS_PER_BLOCK - 1].num_filters
    }

    /// Input channels seen by each layer given the block input channels.
    pub fn layer_input_channels(&self, block_input: u32) -> [u32; LAYERS_PER_BLOCK] {
        let mut out = [0; LAYERS_PER_BLOCK];
        let mut running = block_input;
        for (slot, layer) in out.iter_mut().zip(&self.layers) {
            *slot = running;
            running += layer.num_filters;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub num_filters: u32,
    pub filter_h: u32,
    pub filter_w: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub down_blocks: [DenseBlockSpec; 3],
    pub pooling: [PoolingType; 2],
    pub up_blocks: [DenseBlockSpec; 3],
    pub head: HeadSpec,
}

impl ArchDescriptor {
    pub fn class_count(&self) -> u32 {
        self.head.num_filters
    }

    /// All six blocks in network order.
    pub fn blocks(&self) -> impl Iterator<Item = &DenseBlockSpec> {
        self.down_blocks.iter().chain(self.up_blocks.iter())
    }

    pub fn validate(&self) -> Result<()> {
        for (b, block) in self.blocks().enumerate() {
            for (l, layer) in block.layers.iter().enumerate() {
                layer.validate(&format!("block {} layer {}", b + 1, l + 1))?;
            }
        }
        LayerSpec::new(
            self.head.num_filters,
            self.head.filter_h,
            self.head.filter_w,
        )
        .validate("head")
    }

    /// Expert DenseCNN baseline: 3x3 filters, growth 32/64/128/128/64/32,
    /// average pooling, 3x3 head.
    pub fn expert_dense_cnn(class_count: u32) -> Self {
        let block = |nf| DenseBlockSpec::uniform(LayerSpec::new(nf, 3, 3));
        ArchDescriptor {
            down_blocks: [
                block(EXPERT_GROWTH[0]),
                block(EXPERT_GROWTH[1]),
                block(EXPERT_GROWTH[2]),
            ],
            pooling: [PoolingType::Average; 2],
            up_blocks: [
                block(EXPERT_GROWTH[3]),
                block(EXPERT_GROWTH[4]),
                block(EXPERT_GROWTH[5]),
            ],
            head: HeadSpec {
                num_filters: class_count,
                filter_h: 3,
                filter_w: 3,
            },
        }
    }
}

const EXPECTED_LAYOUT_LEN: usize = BLOCKS * LAYERS_PER_BLOCK * 3 + 2 + 2;

fn expected_kind(index: usize) -> DimensionKind {
    let per_layer = BLOCKS * LAYERS_PER_BLOCK * 3;
    if index < per_layer {
        match index % 3 {
            0 => DimensionKind::NumFilters,
            1 => DimensionKind::FilterHeight,
            _ => DimensionKind::FilterWidth,
        }
    } else {
        match index - per_layer {
            0 => DimensionKind::FilterHeight,
            1 => DimensionKind::FilterWidth,
            _ => DimensionKind::Pooling,
        }
    }
}

/// Checks that `space` follows the block-major layer layout of the preset.
pub fn check_layout(space: &SearchSpace) -> Result<()> {
    for (i, dim) in space.dimensions().iter().enumerate() {
        if i >= EXPECTED_LAYOUT_LEN {
            return Err(Error::Layout {
                index: i,
                name: dim.name.clone(),
                reason: format!("layout has only {EXPECTED_LAYOUT_LEN} dimensions"),
            });
        }
        let want = expected_kind(i);
        if dim.kind != want {
            return Err(Error::Layout {
                index: i,
                name: dim.name.clone(),
                reason: format!("expected kind {want:?}, found {:?}", dim.kind),
            });
        }
    }
    if space.len() < EXPECTED_LAYOUT_LEN {
        let last = space.dimensions().last().expect("spaces are non-empty");
        return Err(Error::Layout {
            index: space.len() - 1,
            name: last.name.clone(),
            reason: format!(
                "layout needs {EXPECTED_LAYOUT_LEN} dimensions, space has {}",
                space.len()
            ),
        });
    }
    Ok(())
}

/// Decodes a policy into a full descriptor.
pub fn decode_architecture(
    space: &SearchSpace,
    policy: &PolicyVector,
    class_count: u32,
) -> Result<ArchDescriptor> {
    check_layout(space)?;
    space.validate(policy)?;
    let int_at = |i: usize| -> Result<u32> {
        let dim = space.dimension(i);
        let y = dim.affine(policy.coords[i])?;
        u32::try_from(y).map_err(|_| Error::Layout {
            index: i,
            name: dim.name.clone(),
            reason: format!("decoded value {y} is not a valid size"),
        })
    };
    let mut blocks = Vec::with_capacity(BLOCKS);
    for b in 0..BLOCKS {
        let mut layers = [LayerSpec::new(1, 1, 1); LAYERS_PER_BLOCK];
        for (l, layer) in layers.iter_mut().enumerate() {
            let base = (b * LAYERS_PER_BLOCK + l) * 3;
            *layer = LayerSpec::new(int_at(base)?, int_at(base + 1)?, int_at(base + 2)?);
            layer
                .validate(&format!("block {} layer {}", b + 1, l + 1))
                .map_err(|e| Error::Layout {
                    index: base,
                    name: space.dimension(base).name.clone(),
                    reason: e.to_string(),
                })?;
        }
        blocks.push(DenseBlockSpec { layers });
    }
    let head_base = BLOCKS * LAYERS_PER_BLOCK * 3;
    let pool_at = |i: usize| -> Result<PoolingType> {
        Ok(space
            .dimension(i)
            .decode(policy.coords[i])?
            .as_pooling()
            .expect("layout check guarantees a pooling dimension"))
    };
    let head = HeadSpec {
        num_filters: class_count,
        filter_h: int_at(head_base)?,
        filter_w: int_at(head_base + 1)?,
    };
    let mut it = blocks.into_iter();
    let mut next = || it.next().expect("six blocks");
    let arch = ArchDescriptor {
        down_blocks: [next(), next(), next()],
        pooling: [pool_at(head_base + 2)?, pool_at(head_base + 3)?],
        up_blocks: [next(), next(), next()],
        head,
    };
    arch.validate().map_err(|e| Error::Layout {
        index: head_base,
        name: space.dimension(head_base).name.clone(),
        reason: e.to_string(),
    })?;
    Ok(arch)
}

/// Inverse of [`decode_architecture`]. Fails when a value is off-grid.
pub fn encode_architecture(space: &SearchSpace, arch: &ArchDescriptor) -> Result<PolicyVector> {
    check_layout(space)?;
    let mut values: Vec<i64> = Vec::with_capacity(space.len());
    for block in arch.blocks() {
        for layer in &block.layers {
            values.extend([
                i64::from(layer.num_filters),
                i64::from(layer.filter_h),
                i64::from(layer.filter_w),
            ]);
        }
    }
    values.push(i64::from(arch.head.filter_h));
    values.push(i64::from(arch.head.filter_w));
    values.extend(arch.pooling.iter().map(|p| p.code()));
    let coords = values
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let dim = space.dimension(i);
            dim.encode(y).ok_or_else(|| Error::Layout {
                index: i,
                name: dim.name.clone(),
                reason: format!("value {y} is not on the grid"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    space.policy(coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: u32,
    pub w: u32,
    pub c: u32,
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Conv,
    Pool,
    Upsample,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub name: String,
    pub kind: StageKind,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTable {
    pub rows: Vec<ShapeRow>,
}

impl ShapeTable {
    pub fn output(&self) -> Shape {
        self.rows.last().expect("tables are non-empty").output
    }

    /// Smallest spatial shape, reached after the second pooling stage.
    pub fn bottleneck(&self) -> Shape {
        self.rows
            .iter()
            .rfind(|r| r.kind == StageKind::Pool)
            .map(|r| r.output)
            .expect("two pooling stages")
    }

    /// Input channels of every convolution in network order (25 entries).
    pub fn conv_input_channels(&self) -> Vec<u32> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, StageKind::Conv | StageKind::Head))
            .map(|r| r.input.c)
            .collect()
    }
}

/// Walks the network, recording per-stage input and output shapes.
pub fn propagate_shapes(
    arch: &ArchDescriptor,
    input_h: u32,
    input_w: u32,
    input_c: u32,
) -> Result<ShapeTable> {
    if input_h == 0 || input_w == 0 || !input_h.is_multiple_of(4) || !input_w.is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "input {input_h}x{input_w} must be positive and divisible by 4"
        )));
    }
    if input_c == 0 {
        return Err(Error::Shape("input has zero channels".into()));
    }
    arch.validate()?;
    let mut rows = Vec::with_capacity(32);
    let mut cur = Shape {
        h: input_h,
        w: input_w,
        c: input_c,
    };
    let walk_block =
        |rows: &mut Vec<ShapeRow>, cur: &mut Shape, b: usize, block: &DenseBlockSpec| {
            let ins = block.layer_input_channels(cur.c);
            for (l, layer) in block.layers.iter().enumerate() {
                let input = Shape { c: ins[l], ..*cur };
                let output = Shape {
                    c: layer.num_filters,
                    ..*cur
                };
                rows.push(ShapeRow {
                    name: format!("block{}.layer{}", b + 1, l + 1),
                    kind: StageKind::Conv,
                    input,
                    output,
                });
            }
            cur.c = block.output_channels();
        };
    for (i, block) in arch.down_blocks.iter().enumerate() {
        walk_block(&mut rows, &mut cur, i, block);
        if let Some(pool) = arch.pooling.get(i) {
            let output = Shape {
                h: cur.h / 2,
                w: cur.w / 2,
                c: cur.c,
            };
            rows.push(ShapeRow {
                name: format!("down{}.{pool}_pool", i + 1),
                kind: StageKind::Pool,
                input: cur,
                output,
            });
            cur = output;
        }
    }
    for (i, block) in arch.up_blocks.iter().enumerate() {
        walk_block(&mut rows, &mut cur, i + 3, block);
        if i < 2 {
            let output = Shape {
                h: cur.h * 2,
                w: cur.w * 2,
                c: cur.c,
            };
            rows.push(ShapeRow {
                name: format!("up{}.bilinear", i + 1),
                kind: StageKind::Upsample,
                input: cur,
                output,
            });
            cur = output;
        }
    }
    rows.push(ShapeRow {
        name: "head.conv_softmax".into(),
        kind: StageKind::Head,
        input: cur,
        output: Shape {
            c: arch.head.num_filters,
            ..cur
        },
    });
    Ok(ShapeTable { rows })
}

/// Parameters of one block layer: conv weights and bias, batch-norm scale and
/// shift per filter, and the Swish beta.
pub fn layer_parameters(layer: &LayerSpec, input_c: u32) -> u64 {
    let nf = u64::from(layer.num_filters);
    let kernel = u64::from(layer.filter_h) * u64::from(layer.filter_w) * u64::from(input_c);
    nf * kernel + nf + 2 * nf + 1
}

/// Parameters of the head: conv weights and bias. Softmax has none.
pub fn head_parameters(head: &HeadSpec, input_c: u32) -> u64 {
    let nf = u64::from(head.num_filters);
    nf * u64::from(head.filter_h) * u64::from(head.filter_w) * u64::from(input_c) + nf
}

pub fn count_parameters(arch: &ArchDescriptor, input_c: u32) -> u64 {
    let mut total = 0;
    let mut c = input_c;
    for block in arch.blocks() {
        let ins = block.layer_input_channels(c);
        total += block
            .layers
            .iter()
            .zip(ins)
            .map(|(layer, cin)| layer_parameters(layer, cin))
            .sum::<u64>();
        c = block.output_channels();
    }
    total + head_parameters(&arch.head, c)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerConvention {
    order: String,
    activation: String,
    swish_beta_init: f64,
    swish_beta_learnable: bool,
    batch_norm: bool,
    concat: String,
}

impl LayerConvention {
    fn standard() -> Self {
        LayerConvention {
            order: "swish-bn-conv".into(),
            activation: "swish".into(),
            swish_beta_init: 1.0,
            swish_beta_learnable: true,
            batch_norm: true,
            concat: "block_input+previous_layers".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathRendering {
    blocks: Vec<DenseBlockSpec>,
    transitions: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadRendering {
    num_filters: u32,
    filter_h: u32,
    filter_w: u32,
    activation: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchRendering {
    format: String,
    version: u32,
    layer: LayerConvention,
    down_path: PathRendering,
    up_path: PathRendering,
    head: HeadRendering,
}

/// Structured rendering embedded in trainer requests.
pub fn architecture_value(arch: &ArchDescriptor) -> serde_json::Value {
    let rendering = ArchRendering {
        format: ARCH_FORMAT.into(),
        version: ARCH_VERSION,
        layer: LayerConvention::standard(),
        down_path: PathRendering {
            blocks: arch.down_blocks.to_vec(),
            transitions: arch.pooling.iter().map(|p| format!("{p}_pool")).collect(),
        },
        up_path: PathRendering {
            blocks: arch.up_blocks.to_vec(),
            transitions: vec!["bilinear_x2".into(); 2],
        },
        head: HeadRendering {
            num_filters: arch.head.num_filters,
            filter_h: arch.head.filter_h,
            filter_w: arch.head.filter_w,
            activation: "softmax".into(),
        },
    };
    serde_json::to_value(rendering).expect("rendering is plain data")
}

/// Pretty-printed, deterministic text rendering (trailing newline included).
pub fn render_architecture(arch: &ArchDescriptor) -> String {
    let mut text =
        serde_json::to_string_pretty(&architecture_value(arch)).expect("rendering is plain data");
    text.push('\n');
    text
}

pub fn parse_architecture_value(value: serde_json::Value) -> Result<ArchDescriptor> {
    let r: ArchRendering =
        serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    if r.format != ARCH_FORMAT || r.version != ARCH_VERSION {
        return Err(Error::Format(format!(
            "unsupported architecture format {} v{}",
            r.format, r.version
        )));
    }
    let blocks3 = |p: &PathRendering, which: &str| -> Result<[DenseBlockSpec; 3]> {
        <[DenseBlockSpec; 3]>::try_from(p.blocks.clone())
            .map_err(|_| Error::Format(format!("{which} path needs 3 blocks")))
    };
    let pooling = r
        .down_path
        .transitions
        .iter()
        .map(|t| match t.as_str() {
            "max_pool" => Ok(PoolingType::Max),
            "average_pool" => Ok(PoolingType::Average),
            other => Err(Error::Format(format!("unknown down transition `{other}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let pooling = <[PoolingType; 2]>::try_from(pooling)
        .map_err(|_| Error::Format("down path needs 2 transitions".into()))?;
    if r.up_path.transitions.len() != 2 || r.up_path.transitions.iter().any(|t| t != "bilinear_x2")
    {
        return Err(Error::Format(
            "up path needs 2 bilinear_x2 transitions".into(),
        ));
    }
    let arch = ArchDescriptor {
        down_blocks: blocks3(&r.down_path, "down")?,
        pooling,
        up_blocks: blocks3(&r.up_path, "up")?,
        head: HeadSpec {
            num_filters: r.head.num_filters,
            filter_h: r.head.filter_h,
            filter_w: r.head.filter_w,
        },
    };
    arch.validate()?;
    Ok(arch)
}

pub fn parse_architecture(text: &str) -> Result<ArchDescriptor> {
    let value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    parse_architecture_value(value)
}

/// Human-readable block/layer table.
pub fn describe_table(arch: &ArchDescriptor) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<6} {:>8} {:>8}",
        "block", "layer", "filters", "kernel"
    );
    for (b, block) in arch.blocks().enumerate() {
        for (l, layer) in block.layers.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<8} {:<6} {:>8} {:>8}",
                b + 1,
                l + 1,
                layer.num_filters,
                format!("{}x{}", layer.filter_h, layer.filter_w)
            );
        }
        if b < 2 {
            let _ = writeln!(out, "  -> {} pooling /2", arch.pooling[b]);
        } else if (3..5).contains(&b) {
            let _ = writeln!(out, "  -> bilinear x2");
        }
    }
    let _ = writeln!(
        out,
        "{:<8} {:<6} {:>8} {:>8}",
        "head",
        "-",
        arch.head.num_filters,
        format!("{}x{}", arch.head.filter_h, arch.head.filter_w)
    );
    out
}
