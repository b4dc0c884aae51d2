use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use disentangle_tensor::no_grad;
use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::model::Networks;
use crate::{Error, Result};

const LABEL_PREFIX: &str = "label:";

/// Flattened codes (one row per point) with per-point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub points: DMatrix<f64>,
    pub label_names: Vec<String>,
    pub labels: Vec<Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(points: DMatrix<f64>, label_names: Vec<String>, labels: Vec<Vec<usize>>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptySelection("embedding set has no points".into()));
        }
        if points.iter().any(|v| v.is_nan()) {
            return Err(Error::Contract("embedding contains NaN".into()));
        }
        if labels.len() != points.nrows() || labels.iter().any(|l| l.len() != label_names.len()) {
            return Err(Error::Shape("labels do not match the points".into()));
        }
        Ok(Self { points, label_names, labels })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.points.ncols()
    }

    pub fn label_index(&self, name: &str) -> Result<usize> {
        self.label_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("embedding has no label column '{name}'")))
    }
}

/// `E_m` codes of every dataset item, flattened, with all attribute labels.
pub fn embed(nets: &Networks<f32>, data: &Dataset, m: usize) -> Result<EmbeddingSet> {
    if m > nets.attributes() {
        return Err(Error::Contract(format!("code index {m} out of range 0..={}", nets.attributes())));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows: Vec<f64> = Vec::new();
    let mut width = 0;
    no_grad(|| -> Result<()> {
        for chunk in idx.chunks(64) {
            let z = nets.encode(m, &data.batch::<f32>(chunk).images)?;
            width = z.numel() / chunk.len();
            rows.extend(z.data().iter().map(|&v| v as f64));
        }
        Ok(())
    })?;
    let points = DMatrix::from_row_slice(data.len(), width, &rows);
    let names = data.schema.attributes().iter().map(|a| a.name.clone()).collect();
    EmbeddingSet::new(points, names, data.items.iter().map(|it| it.labels.clone()).collect())
}

/// Tab-separated text: a header of `label:<name>` columns then `f<k>`
/// feature columns, one point per line. Floats use shortest round-trip form.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = set.label_names.iter().map(|n| format!("{LABEL_PREFIX}{n}")).collect();
    header.extend((0..set.dims()).map(|k| format!("f{k}")));
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join("\t")).map_err(io)?;
    for (i, labels) in set.labels.iter().enumerate() {
        let mut cols: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        cols.extend(set.points.row(i).iter().map(|v| v.to_string()));
        writeln!(w, "{}", cols.join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |row: usize, reason: String| Error::Ingestion { row, reason };
    let header = lines
        .next()
        .ok_or_else(|| bad(0, "empty embedding file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let label_names: Vec<String> = cols
        .iter()
        .take_while(|c| c.starts_with(LABEL_PREFIX))
        .map(|c| c[LABEL_PREFIX.len()..].to_string())
        .collect();
    let nl = label_names.len();
    let d = cols.len() - nl;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != nl + d {
            return Err(bad(i + 1, format!("expected {} columns, found {}", nl + d, fields.len())));
        }
        labels.push(
            fields[..nl]
                .iter()
                .map(|f| f.parse::<usize>().map_err(|e| bad(i + 1, format!("label '{f}': {e}"))))
                .collect::<Result<Vec<_>>>()?,
        );
        for f in &fields[nl..] {
            values.push(f.parse::<f64>().map_err(|e| bad(i + 1, format!("value '{f}': {e}")))?);
        }
    }
    let n = labels.len();
    EmbeddingSet::new(DMatrix::from_row_slice(n, d, &values), label_names, labels)
}

/// Projection of the rows of `x` onto their top `k` principal components.
/// Works through the `N x N` Gram matrix when `d > N`. Component signs are
/// fixed so the largest-magnitude loading is positive.
pub fn pca(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let k = k.min(n).min(d);
    let mut out = DMatrix::zeros(n, k);
    if d > n {
        let gram = &c * c.transpose();
        let eig = gram.symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        for (j, &e) in order.iter().take(k).enumerate() {
            let lam = eig.eigenvalues[e].max(0.0);
            let mut v = eig.eigenvectors.column(e).into_owned();
            // the matching loading vector is c^T v; fix its sign
            let loading = c.transpose() * &v;
            if sign_of_largest(loading.as_slice()) < 0.0 {
                v = -v;
            }
            out.set_column(j, &(v * lam.sqrt()));
        }
    } else {
        let cov = c.transpose() * &c;
        let eig = cov.symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        for (j, &e) in order.iter().take(k).enumerate() {
            let mut v = eig.eigenvectors.column(e).into_owned();
            if sign_of_largest(v.as_slice()) < 0.0 {
                v = -v;
            }
            out.set_column(j, &(&c * v));
        }
    }
    out
}

fn descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn sign_of_largest(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best }).signum()
}

/// Writes `embeddings_z{m}.tsv` and `pca_z{m}.tsv` (labels + two PCA
/// coordinates) under `dir`.
pub fn export_embeddings(nets: &Networks<f32>, data: &Dataset, m: usize, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let set = embed(nets, data, m)?;
    let emb = dir.join(format!("embeddings_z{m}.tsv"));
    write_embeddings(&set, &emb)?;
    let proj = EmbeddingSet::new(pca(&set.points, 2), set.label_names.clone(), set.labels.clone())?;
    let pc = dir.join(format!("pca_z{m}.tsv"));
    write_embeddings(&proj, &pc)?;
    Ok((emb, pc))
}

/// `C_target` posteriors on the `E_code` codes, one `K`-dim point per item:
/// the part of code `code` that the attribute-`target` classifier can read.
pub fn posterior_embedding(nets: &Networks<f32>, data: &Dataset, code: usize, target: usize) -> Result<EmbeddingSet> {
    nets.schema.check_index(target)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let k = nets.schema.class_count(target)?;
    let mut rows = Vec::with_capacity(data.len() * k);
    no_grad(|| -> Result<()> {
        for chunk in idx.chunks(64) {
            let z = nets.encode(code, &data.batch::<f32>(chunk).images)?;
            rows.extend(nets.classify_latent(&z, target)?.data().iter().map(|&v| v as f64));
        }
        Ok(())
    })?;
    let names = data.schema.attributes().iter().map(|a| a.name.clone()).collect();
    EmbeddingSet::new(
        DMatrix::from_row_slice(data.len(), k, &rows),
        names,
        data.items.iter().map(|it| it.labels.clone()).collect(),
    )
}
