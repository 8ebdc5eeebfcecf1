//! Flattening and naming of the trainable parameter sets.
//!
//! The flat order is contractual: optimizer state, gradient vectors and
//! checkpoint blobs all use it. Vectors are treated as 1 x n tensors.

use crate::error::{Error, Result};
use crate::model::{AdapterParams, BackboneParams, LstmParams};
use crate::numerics::Tensor2;

pub const BACKBONE_ENTRIES: [&str; 4] = ["enc_weight", "enc_bias", "head_weight", "head_bias"];

pub const ADAPTER_ENTRIES: [&str; 13] = [
    "char_embed",
    "lstm_fwd_w_ih",
    "lstm_fwd_w_hh",
    "lstm_fwd_bias",
    "lstm_bwd_w_ih",
    "lstm_bwd_w_hh",
    "lstm_bwd_bias",
    "proj",
    "proj_bias",
    "no_context_embed",
    "w_q",
    "w_k",
    "w_v",
];

/// (name, rows, cols, values) view of the backbone in manifest order.
pub fn backbone_entries(b: &BackboneParams) -> Vec<(&'static str, usize, usize, &[f64])> {
    vec![
        ("enc_weight", b.enc_weight.rows(), b.enc_weight.cols(), b.enc_weight.data()),
        ("enc_bias", 1, b.enc_bias.len(), b.enc_bias.as_slice()),
        ("head_weight", b.head_weight.rows(), b.head_weight.cols(), b.head_weight.data()),
        ("head_bias", 1, b.head_bias.len(), b.head_bias.as_slice()),
    ]
}

pub fn adapter_entries(a: &AdapterParams) -> Vec<(&'static str, usize, usize, &[f64])> {
    vec![
        ("char_embed", a.char_embed.rows(), a.char_embed.cols(), a.char_embed.data()),
        ("lstm_fwd_w_ih", a.lstm_fwd.w_ih.rows(), a.lstm_fwd.w_ih.cols(), a.lstm_fwd.w_ih.data()),
        ("lstm_fwd_w_hh", a.lstm_fwd.w_hh.rows(), a.lstm_fwd.w_hh.cols(), a.lstm_fwd.w_hh.data()),
        ("lstm_fwd_bias", 1, a.lstm_fwd.bias.len(), a.lstm_fwd.bias.as_slice()),
        ("lstm_bwd_w_ih", a.lstm_bwd.w_ih.rows(), a.lstm_bwd.w_ih.cols(), a.lstm_bwd.w_ih.data()),
        ("lstm_bwd_w_hh", a.lstm_bwd.w_hh.rows(), a.lstm_bwd.w_hh.cols(), a.lstm_bwd.w_hh.data()),
        ("lstm_bwd_bias", 1, a.lstm_bwd.bias.len(), a.lstm_bwd.bias.as_slice()),
        ("proj", a.proj.rows(), a.proj.cols(), a.proj.data()),
        ("proj_bias", 1, a.proj_bias.len(), a.proj_bias.as_slice()),
        ("no_context_embed", 1, a.no_context_embed.len(), a.no_context_embed.as_slice()),
        ("w_q", a.w_q.rows(), a.w_q.cols(), a.w_q.data()),
        ("w_k", a.w_k.rows(), a.w_k.cols(), a.w_k.data()),
        ("w_v", a.w_v.rows(), a.w_v.cols(), a.w_v.data()),
    ]
}

pub fn flatten_backbone(b: &BackboneParams) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, _, _, data) in backbone_entries(b) {
        out.extend_from_slice(data);
    }
    out
}

pub fn flatten_adapter(a: &AdapterParams) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, _, _, data) in adapter_entries(a) {
        out.extend_from_slice(data);
    }
    out
}

fn take<'a>(flat: &mut &'a [f64], n: usize) -> &'a [f64] {
    let (head, tail) = flat.split_at(n);
    *flat = tail;
    head
}

/// Rebuild a backbone from a flat vector, taking shapes from `template`.
pub fn backbone_from_flat(template: &BackboneParams, flat: &[f64]) -> BackboneParams {
    let mut rest = flat;
    let b = BackboneParams {
        enc_weight: tensor_from(&mut rest, template.enc_weight.rows(), template.enc_weight.cols()),
        enc_bias: take(&mut rest, template.enc_bias.len()).to_vec(),
        head_weight: tensor_from(&mut rest, template.head_weight.rows(), template.head_weight.cols()),
        head_bias: take(&mut rest, template.head_bias.len()).to_vec(),
    };
    assert!(rest.is_empty(), "flat backbone length mismatch");
    b
}

pub fn adapter_from_flat(template: &AdapterParams, flat: &[f64]) -> AdapterParams {
    let mut rest = flat;
    let a = AdapterParams {
        char_embed: tensor_from(&mut rest, template.char_embed.rows(), template.char_embed.cols()),
        lstm_fwd: lstm_from(&mut rest, &template.lstm_fwd),
        lstm_bwd: lstm_from(&mut rest, &template.lstm_bwd),
        proj: tensor_from(&mut rest, template.proj.rows(), template.proj.cols()),
        proj_bias: take(&mut rest, template.proj_bias.len()).to_vec(),
        no_context_embed: take(&mut rest, template.no_context_embed.len()).to_vec(),
        w_q: tensor_from(&mut rest, template.w_q.rows(), template.w_q.cols()),
        w_k: tensor_from(&mut rest, template.w_k.rows(), template.w_k.cols()),
        w_v: tensor_from(&mut rest, template.w_v.rows(), template.w_v.cols()),
    };
    assert!(rest.is_empty(), "flat adapter length mismatch");
    a
}

fn tensor_from(rest: &mut &[f64], rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, take(rest, rows * cols).to_vec()).expect("shape from template")
}

fn lstm_from(rest: &mut &[f64], template: &LstmParams) -> LstmParams {
    LstmParams {
        w_ih: tensor_from(rest, template.w_ih.rows(), template.w_ih.cols()),
        w_hh: tensor_from(rest, template.w_hh.rows(), template.w_hh.cols()),
        bias: take(rest, template.bias.len()).to_vec(),
    }
}

type LoadedEntries = Vec<(usize, usize, Vec<f64>)>;

/// Assemble a backbone from checkpoint entries (manifest order), validating
/// internal shape consistency.
pub fn backbone_from_entries(mut entries: LoadedEntries) -> Result<BackboneParams> {
    if entries.len() != BACKBONE_ENTRIES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} backbone entries, found {}",
            BACKBONE_ENTRIES.len(),
            entries.len()
        )));
    }
    let (hb_r, hb_c, head_bias) = entries.pop().unwrap();
    let (hw_r, hw_c, head_weight) = entries.pop().unwrap();
    let (eb_r, eb_c, enc_bias) = entries.pop().unwrap();
    let (ew_r, ew_c, enc_weight) = entries.pop().unwrap();
    if eb_r != 1 || hb_r != 1 || eb_c != ew_c || hw_r != ew_c || hb_c != hw_c {
        return Err(Error::Checkpoint("inconsistent backbone shapes".into()));
    }
    Ok(BackboneParams {
        enc_weight: Tensor2::from_vec(ew_r, ew_c, enc_weight)?,
        enc_bias,
        head_weight: Tensor2::from_vec(hw_r, hw_c, head_weight)?,
        head_bias,
    })
}

pub fn adapter_from_entries(entries: LoadedEntries) -> Result<AdapterParams> {
    if entries.len() != ADAPTER_ENTRIES.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} adapter entries, found {}",
            ADAPTER_ENTRIES.len(),
            entries.len()
        )));
    }
    let mut it = entries.into_iter();
    let mut tensor = |name: &str| -> Result<Tensor2> {
        let (r, c, data) = it.next().unwrap();
        Tensor2::from_vec(r, c, data)
            .map_err(|_| Error::Checkpoint(format!("bad shape for {name}")))
    };
    let char_embed = tensor("char_embed")?;
    let f_w_ih = tensor("lstm_fwd_w_ih")?;
    let f_w_hh = tensor("lstm_fwd_w_hh")?;
    let f_bias = tensor("lstm_fwd_bias")?;
    let b_w_ih = tensor("lstm_bwd_w_ih")?;
    let b_w_hh = tensor("lstm_bwd_w_hh")?;
    let b_bias = tensor("lstm_bwd_bias")?;
    let proj = tensor("proj")?;
    let proj_bias = tensor("proj_bias")?;
    let no_context_embed = tensor("no_context_embed")?;
    let w_q = tensor("w_q")?;
    let w_k = tensor("w_k")?;
    let w_v = tensor("w_v")?;

    let h = f_w_hh.cols();
    let e = char_embed.cols();
    let d = w_q.rows();
    let consistent = f_w_ih.rows() == 4 * h
        && f_w_ih.cols() == e
        && f_bias.cols() == 4 * h
        && b_w_ih.rows() == 4 * h
        && b_w_ih.cols() == e
        && b_w_hh.cols() == h
        && b_bias.cols() == 4 * h
        && proj.rows() == 2 * h
        && proj.cols() == d
        && proj_bias.cols() == d
        && no_context_embed.cols() == d
        && w_q.cols() == d
        && w_k.rows() == d
        && w_k.cols() == d
        && w_v.rows() == d
        && w_v.cols() == d;
    if !consistent {
        return Err(Error::Checkpoint("inconsistent adapter shapes".into()));
    }
    Ok(AdapterParams {
        char_embed,
        lstm_fwd: LstmParams {
            w_ih: f_w_ih,
            w_hh: f_w_hh,
            bias: f_bias.data().to_vec(),
        },
        lstm_bwd: LstmParams {
            w_ih: b_w_ih,
            w_hh: b_w_hh,
            bias: b_bias.data().to_vec(),
        },
        proj,
        proj_bias: proj_bias.data().to_vec(),
        no_context_embed: no_context_embed.data().to_vec(),
        w_q,
        w_k,
        w_v,
    })
}
