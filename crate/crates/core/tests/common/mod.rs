//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the code path it is used to check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gridpg_core::arch::ArchDescriptor;
use gridpg_core::metrics::LabelMask;
use gridpg_core::optimizer::PerturbationBatch;

/// Pixel counting Dice.
pub fn brute_dice(a: &LabelMask, b: &LabelMask, class_id: u8) -> f64 {
    let mut inter = 0usize;
    let mut size_a = 0usize;
    let mut size_b = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let in_a = a.get(x, y) == class_id;
            let in_b = b.get(x, y) == class_id;
            if in_a {
                size_a += 1;
            }
            if in_b {
                size_b += 1;
            }
            if in_a && in_b {
                inter += 1;
            }
        }
    }
    if size_a + size_b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (size_a + size_b) as f64
    }
}

fn points(m: &LabelMask, class_id: u8) -> Vec<(f64, f64)> {
    let [sx, sy] = m.spacing();
    let mut out = Vec::new();
    for y in 0..m.height() {
        for x in 0..m.width() {
            if m.get(x, y) == class_id {
                out.push((x as f64 * sx, y as f64 * sy));
            }
        }
    }
    out
}

fn directed(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    let mut worst = 0.0f64;
    for &(ax, ay) in from {
        let mut nearest = f64::INFINITY;
        for &(bx, by) in to {
            let d = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
            nearest = nearest.min(d);
        }
        worst = worst.max(nearest);
    }
    worst
}

/// All-pairs Hausdorff distance; `None` when either set is empty.
pub fn brute_hausdorff(a: &LabelMask, b: &LabelMask, class_id: u8) -> Option<f64> {
    let pa = points(a, class_id);
    let pb = points(b, class_id);
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    Some(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Groups rewards by label with a map, per dimension: `[neg, zero, pos]` means.
pub fn brute_averages(batch: &PerturbationBatch, rewards: &[Option<f64>]) -> Vec<[Option<f64>; 3]> {
    let n = batch.labels[0].len();
    (0..n)
        .map(|d| {
            let mut groups: BTreeMap<i8, Vec<f64>> = BTreeMap::new();
            for (i, row) in batch.labels.iter().enumerate() {
                if let Some(r) = rewards[i] {
                    groups.entry(row[d]).or_default().push(r);
                }
            }
            let mean = |s: i8| {
                groups.get(&s).map(|v| {
                    let mut total = 0.0;
                    for r in v {
                        total += r;
                    }
                    total / v.len() as f64
                })
            };
            [mean(-1), mean(0), mean(1)]
        })
        .collect()
}

/// Symbolic walk of the dense-block wiring: every feature map is a named
/// tensor, concatenation is list union, and channel counts are looked up per
/// tensor. Returns the input channels of all 25 convolutions in order.
pub fn symbolic_conv_inputs(arch: &ArchDescriptor, input_c: u32) -> Vec<u32> {
    let mut sizes: BTreeMap<String, u32> = BTreeMap::new();
    sizes.insert("x".into(), input_c);
    let mut current = vec!["x".to_string()];
    let mut out = Vec::new();
    let blocks: Vec<_> = arch.blocks().cloned().collect();
    for (b, block) in blocks.iter().enumerate() {
        let mut features = current.clone();
        let mut last = String::new();
        for (l, layer) in block.layers.iter().enumerate() {
            let consumed: u32 = features.iter().map(|t| sizes[t]).sum();
            out.push(consumed);
            let name = format!("b{b}l{l}");
            sizes.insert(name.clone(), layer.num_filters);
            features.push(name.clone());
            last = name;
        }
        current = vec![last];
    }
    out.push(current.iter().map(|t| sizes[t]).sum());
    out
}

/// Parameter count written out table-style for the expert baseline: each
/// block's four layers see `cin, cin+g, cin+2g, cin+3g` channels.
pub fn expert_parameter_table(class_count: u64, input_c: u64) -> u64 {
    let growth = [32u64, 64, 128, 128, 64, 32];
    let mut total = 0;
    let mut cin = input_c;
    for g in growth {
        for l in 0..4u64 {
            let channels = cin + l * g;
            let conv = g * 3 * 3 * channels;
            let bias = g;
            let bn = 2 * g;
            let beta = 1;
            total += conv + bias + bn + beta;
        }
        cin = g;
    }
    total + class_count * 3 * 3 * cin + class_count
}

/// Writes an executable shell script and returns its path.
pub fn write_script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
    path
}

/// Shell snippet that reads one request and stores its policy id in `$id`.
pub const READ_ID: &str = r#"read line
id=$(printf '%s' "$line" | sed 's/.*"policy_id":"\([^"]*\)".*/\1/')"#;

/// Replies with a fixed reward.
pub fn echo_trainer(dir: &Path, reward: &str) -> PathBuf {
    write_script(
        dir,
        &format!("echo_{}.sh", reward.replace('.', "_")),
        &format!(
            "{READ_ID}\nprintf '{{\"type\":\"result\",\"policy_id\":\"%s\",\"reward\":{reward}}}\\n' \"$id\""
        ),
    )
}
