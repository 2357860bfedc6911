//! Versioned text container for fitted models. One item per line,
//! whitespace-separated; floats are written in shortest round-trip form so a
//! save/load/save cycle is byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::core::LabelSpace;
use crate::models::latent::{Activation, DenseLayer, LatentGaussianModel};
use crate::models::mixture::BernoulliMixtureModel;
use crate::{Error, Result};

const MAGIC: &str = "pursuit-model v1";

/// A model loaded from disk.
pub enum ModelFile {
    Mixture(BernoulliMixtureModel),
    Decoder(LatentGaussianModel),
}

pub fn save_mixture(model: &BernoulliMixtureModel, path: &Path) -> Result<()> {
    fs::write(path, mixture_to_string(model))?;
    Ok(())
}

pub fn save_decoder(model: &LatentGaussianModel, path: &Path) -> Result<()> {
    fs::write(path, decoder_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)?;
    parse_model(&text)
}

/// Loads specifically a decoder; errors when the file holds another kind.
pub fn load_decoder(path: &Path) -> Result<LatentGaussianModel> {
    match load_model(path)? {
        ModelFile::Decoder(m) => Ok(m),
        ModelFile::Mixture(_) => Err(Error::model("file holds a mixture, expected a decoder")),
    }
}

pub fn load_mixture(path: &Path) -> Result<BernoulliMixtureModel> {
    match load_model(path)? {
        ModelFile::Mixture(m) => Ok(m),
        ModelFile::Decoder(_) => Err(Error::model("file holds a decoder, expected a mixture")),
    }
}

fn write_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

pub fn mixture_to_string(model: &BernoulliMixtureModel) -> String {
    use crate::models::PosteriorModel;
    let ls = model.label_space();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind mixture");
    let _ = writeln!(out, "labels {}", ls.count());
    for i in 0..ls.count() {
        let _ = writeln!(out, "label {i} {}", ls.name(i));
    }
    let _ = writeln!(out, "components {}", model.k);
    let _ = writeln!(out, "slots {}", model.n_slots);
    let _ = writeln!(out, "theta_min {}", model.theta_min);
    out.push_str("prior");
    write_floats(&mut out, model.prior());
    for y in 0..ls.count() {
        let _ = write!(out, "pi {y}");
        write_floats(&mut out, &model.mix_weights()[y * model.k..(y + 1) * model.k]);
    }
    for y in 0..ls.count() {
        for k in 0..model.k {
            let _ = write!(out, "theta {y} {k}");
            let base = (y * model.k + k) * model.n_slots;
            write_floats(&mut out, &model.theta()[base..base + model.n_slots]);
        }
    }
    out.push_str("end\n");
    out
}

pub fn decoder_to_string(model: &LatentGaussianModel) -> String {
    use crate::models::PosteriorModel;
    let ls = model.label_space();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "kind decoder");
    let _ = writeln!(out, "labels {}", ls.count());
    for i in 0..ls.count() {
        let _ = writeln!(out, "label {i} {}", ls.name(i));
    }
    let _ = writeln!(out, "latent_dim {}", model.latent_dim);
    let _ = writeln!(out, "slots {}", model.n_slots);
    let _ = writeln!(out, "layers {}", model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let _ = writeln!(
            out,
            "layer {i} in {} out {} act {}",
            layer.cols,
            layer.rows,
            layer.activation.name()
        );
        out.push_str("w");
        write_floats(&mut out, &layer.weights);
        out.push_str("b");
        write_floats(&mut out, &layer.bias);
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::model("unexpected end of file"))
    }

    fn expect_tokens(&mut self, head: &str, count: usize) -> Result<Vec<String>> {
        let (no, line) = self.next_line()?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if toks.is_empty() || toks[0] != head || toks.len() != count + 1 {
            return Err(Error::model(format!(
                "line {no}: expected `{head}` with {count} fields, got {line:?}"
            )));
        }
        Ok(toks[1..].to_vec())
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::model(format!("bad {what}: {s:?}")))
}

fn parse_floats(line: &str, head: &[&str], expect: usize) -> Result<Vec<f64>> {
    let mut toks = line.split_whitespace();
    for h in head {
        match toks.next() {
            Some(t) if t == *h => {}
            other => {
                return Err(Error::model(format!(
                    "expected {head:?} prefix, got {other:?} in {line:?}"
                )));
            }
        }
    }
    let vals: Result<Vec<f64>> = toks
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::model(format!("bad float {t:?}")))
        })
        .collect();
    let vals = vals?;
    if vals.len() != expect {
        return Err(Error::model(format!(
            "expected {expect} floats after {head:?}, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (_, magic) = lines.next_line()?;
    if magic != MAGIC {
        return Err(Error::model(format!("bad magic line {magic:?}")));
    }
    let kind = lines.expect_tokens("kind", 1)?;
    let n_labels = parse_usize(&lines.expect_tokens("labels", 1)?[0], "label count")?;
    let mut names = Vec::with_capacity(n_labels);
    for i in 0..n_labels {
        let (no, line) = lines.next_line()?;
        let rest = line
            .strip_prefix(&format!("label {i} "))
            .ok_or_else(|| Error::model(format!("line {no}: expected `label {i} <name>`")))?;
        names.push(rest.to_string());
    }
    let labelspace = LabelSpace::new(names)?;
    match kind[0].as_str() {
        "mixture" => parse_mixture(&mut lines, labelspace),
        "decoder" => parse_decoder(&mut lines, labelspace),
        other => Err(Error::model(format!("unknown model kind {other:?}"))),
    }
}

fn parse_mixture(lines: &mut Lines, labelspace: LabelSpace) -> Result<ModelFile> {
    let k = parse_usize(&lines.expect_tokens("components", 1)?[0], "component count")?;
    let n_slots = parse_usize(&lines.expect_tokens("slots", 1)?[0], "slot count")?;
    let theta_min: f64 = lines.expect_tokens("theta_min", 1)?[0]
        .parse()
        .map_err(|_| Error::model("bad theta_min"))?;
    let n_labels = labelspace.count();
    let (_, prior_line) = lines.next_line()?;
    let prior = parse_floats(prior_line, &["prior"], n_labels)?;
    let mut mix = Vec::with_capacity(n_labels * k);
    for y in 0..n_labels {
        let (_, line) = lines.next_line()?;
        mix.extend(parse_floats(line, &["pi", &y.to_string()], k)?);
    }
    let mut theta = Vec::with_capacity(n_labels * k * n_slots);
    for y in 0..n_labels {
        for kk in 0..k {
            let (_, line) = lines.next_line()?;
            theta.extend(parse_floats(
                line,
                &["theta", &y.to_string(), &kk.to_string()],
                n_slots,
            )?);
        }
    }
    let (_, end) = lines.next_line()?;
    if end != "end" {
        return Err(Error::model("missing `end` marker"));
    }
    Ok(ModelFile::Mixture(BernoulliMixtureModel::new(
        labelspace, k, n_slots, prior, mix, theta, theta_min,
    )?))
}

fn parse_decoder(lines: &mut Lines, labelspace: LabelSpace) -> Result<ModelFile> {
    let latent_dim = parse_usize(&lines.expect_tokens("latent_dim", 1)?[0], "latent_dim")?;
    let n_slots = parse_usize(&lines.expect_tokens("slots", 1)?[0], "slot count")?;
    let n_layers = parse_usize(&lines.expect_tokens("layers", 1)?[0], "layer count")?;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let toks = lines.expect_tokens("layer", 7)?;
        if toks[0] != i.to_string() || toks[1] != "in" || toks[3] != "out" || toks[5] != "act" {
            return Err(Error::model(format!("malformed layer header for layer {i}")));
        }
        let cols = parse_usize(&toks[2], "layer input width")?;
        let rows = parse_usize(&toks[4], "layer output width")?;
        let activation = Activation::parse(&toks[6])?;
        let (_, wline) = lines.next_line()?;
        let weights = parse_floats(wline, &["w"], rows * cols)?;
        let (_, bline) = lines.next_line()?;
        let bias = parse_floats(bline, &["b"], rows)?;
        layers.push(DenseLayer { rows, cols, weights, bias, activation });
    }
    let (_, end) = lines.next_line()?;
    if end != "end" {
        return Err(Error::model("missing `end` marker"));
    }
    Ok(ModelFile::Decoder(LatentGaussianModel::new(
        labelspace, latent_dim, n_slots, layers,
    )?))
}
