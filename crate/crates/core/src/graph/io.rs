//! Dataset readers and writers.
//!
//! Two on-disk layouts are supported:
//!
//! * LINQS citation files: `<name>.content` with tab-separated rows
//!   `id, flag_1 .. flag_d, label` and `<name>.cites` with `cited, citing`
//!   id pairs.
//! * A CSV directory: `edges.csv` (`src,dst[,weight]`), `labels.csv`
//!   (`node,label`, empty label for unlabeled nodes), `features.csv`
//!   (`node,f0,..`) and an optional `masks.csv` (`node,split`).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use log::warn;
use ndarray::Array2;

use super::{Graph, Masks};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of reading a LINQS dataset.
#[derive(Clone, Debug)]
pub struct LinqsImport<T> {
    pub graph: Graph<T>,
    /// Citation rows referring to ids absent from the content file.
    pub skipped_links: usize,
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(file))
}

fn csv_error(path: &Path, line: usize, err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a LINQS `.content` / `.cites` pair into an undirected, deduplicated
/// graph. Class labels are mapped to indices in sorted label order.
pub fn load_linqs<T: Scalar>(content_path: impl AsRef<Path>, cites_path: impl AsRef<Path>) -> Result<LinqsImport<T>> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;

    let mut reader = tsv_reader(content_path)?;
    for (k, record) in reader.records().enumerate() {
        let line = k + 1;
        let record = record.map_err(|e| csv_error(content_path, line, e))?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected || expected < 3 {
            return Err(parse_err(
                content_path,
                line,
                format!("expected {expected} tab-separated columns, found {}", record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(parse_err(content_path, line, format!("duplicate node id '{id}'")));
        }
        let flags = (1..expected - 1)
            .map(|c| {
                record[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(content_path, line, format!("bad feature value '{}'", &record[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        rows.push(flags);
        raw_labels.push(record[expected - 1].trim().to_string());
    }
    if ids.is_empty() {
        return Err(Error::EmptyGraph);
    }

    let class_names: Vec<String> = {
        let mut c = raw_labels.clone();
        c.sort();
        c.dedup();
        c
    };
    let class_of: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|l| Some(class_of[l.as_str()])).collect();

    let n = ids.len();
    let d = rows[0].len();
    let mut features = Array2::<T>::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = T::of(v);
        }
    }

    let mut adjacency = Array2::<T>::zeros((n, n));
    let mut skipped = 0;
    let file = File::open(cites_path).map_err(|e| Error::io(cites_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(file);
    for (k, record) in reader.records().enumerate() {
        let line = k + 1;
        let record = record.map_err(|e| csv_error(cites_path, line, e))?;
        let fields: Vec<&str> = record.iter().flat_map(|f| f.split_whitespace()).collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(cites_path, line, format!("expected 2 ids, found {}", fields.len())));
        }
        match (index.get(fields[0]), index.get(fields[1])) {
            (Some(&a), Some(&b)) => {
                if a != b {
                    adjacency[[a, b]] = T::one();
                    adjacency[[b, a]] = T::one();
                }
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} links with unknown node ids", cites_path.display());
    }

    let graph = Graph::new(adjacency, features, labels)?
        .with_node_names(ids)?
        .with_class_names(class_names)?;
    Ok(LinqsImport {
        graph,
        skipped_links: skipped,
    })
}

/// Writes a graph in LINQS layout. Edge weights are not representable and
/// every nonzero entry is written as a citation.
pub fn save_linqs<T: Scalar>(g: &Graph<T>, content_path: impl AsRef<Path>, cites_path: impl AsRef<Path>) -> Result<()> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();
    let mut w = tsv_writer(content_path)?;
    for i in 0..g.n_nodes() {
        let label = g.label(i).ok_or(Error::MissingLabel(i))?;
        let mut row = Vec::with_capacity(g.feature_dim() + 2);
        row.push(g.node_names()[i].clone());
        row.extend(g.features().row(i).iter().map(|v| v.to_string()));
        row.push(g.class_names()[label].clone());
        w.write_record(&row).map_err(|e| csv_error(content_path, i + 1, e))?;
    }
    w.flush().map_err(|e| Error::io(content_path, e))?;

    let mut w = tsv_writer(cites_path)?;
    for (line, (i, j)) in g.edges().into_iter().enumerate() {
        w.write_record([&g.node_names()[i], &g.node_names()[j]])
            .map_err(|e| csv_error(cites_path, line + 1, e))?;
    }
    w.flush().map_err(|e| Error::io(cites_path, e))
}

fn tsv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().delimiter(b'\t').quote_style(csv::QuoteStyle::Never).from_writer(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn parse_field<V: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<V> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse '{field}'")))
}

/// Reads an edge list `src,dst[,weight]` with a header row. Weight defaults
/// to 1.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, f64)>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (k, record) in csv_reader(path)?.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_error(path, line, e))?;
        if record.len() < 2 || record.len() > 3 {
            return Err(parse_err(path, line, "expected src,dst[,weight]"));
        }
        let w = if record.len() == 3 { parse_field(path, line, &record[2])? } else { 1.0 };
        out.push((parse_field(path, line, &record[0])?, parse_field(path, line, &record[1])?, w));
    }
    Ok(out)
}

/// Writes each undirected edge once as `src,dst,weight`.
pub fn save_edge_list<T: Scalar>(g: &Graph<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e| csv_error(path, 0, e);
    w.write_record(["src", "dst", "weight"]).map_err(io)?;
    for (i, j) in g.edges() {
        w.write_record([i.to_string(), j.to_string(), g.adjacency()[[i, j]].to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `edges.csv`, `labels.csv`, `features.csv` and `masks.csv` into `dir`.
pub fn save_csv_graph<T: Scalar>(g: &Graph<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_edge_list(g, dir.join("edges.csv"))?;

    let path = dir.join("labels.csv");
    let mut w = csv_writer(&path)?;
    let io = |e| csv_error(&path, 0, e);
    w.write_record(["node", "label"]).map_err(io)?;
    for (i, l) in g.labels().iter().enumerate() {
        w.write_record([i.to_string(), l.map(|c| c.to_string()).unwrap_or_default()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("features.csv");
    let mut w = csv_writer(&path)?;
    let io = |e| csv_error(&path, 0, e);
    let mut header = vec!["node".to_string()];
    header.extend((0..g.feature_dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(io)?;
    for (i, row) in g.features().rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("masks.csv");
    let mut w = csv_writer(&path)?;
    let io = |e| csv_error(&path, 0, e);
    w.write_record(["node", "split"]).map_err(io)?;
    let m = g.masks();
    for i in 0..g.n_nodes() {
        let split = if m.train[i] {
            "train"
        } else if m.val[i] {
            "val"
        } else if m.test[i] {
            "test"
        } else {
            ""
        };
        w.write_record([i.to_string().as_str(), split]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Inverse of [`save_csv_graph`]. `masks.csv` is optional.
pub fn load_csv_graph<T: Scalar>(dir: impl AsRef<Path>) -> Result<Graph<T>> {
    let dir = dir.as_ref();

    let path = dir.join("features.csv");
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, record) in csv_reader(&path)?.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_error(&path, line, e))?;
        let node = parse_field(&path, line, &record[0])?;
        let vals = record.iter().skip(1).map(|f| parse_field(&path, line, f)).collect::<Result<Vec<f64>>>()?;
        rows.push((node, vals));
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let d = rows[0].1.len();
    let mut features = Array2::<T>::zeros((n, d));
    for (line, (node, vals)) in rows.iter().enumerate() {
        if *node >= n || vals.len() != d {
            return Err(parse_err(&path, line + 2, "node id out of range or ragged feature row"));
        }
        for (j, &v) in vals.iter().enumerate() {
            features[[*node, j]] = T::of(v);
        }
    }

    let path = dir.join("labels.csv");
    let mut labels = vec![None; n];
    for (k, record) in csv_reader(&path)?.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| csv_error(&path, line, e))?;
        let node: usize = parse_field(&path, line, &record[0])?;
        if node >= n {
            return Err(Error::NodeMismatch(format!("{}:{line}: node {node} not in features", path.display())));
        }
        if record.len() > 1 && !record[1].trim().is_empty() {
            labels[node] = Some(parse_field(&path, line, &record[1])?);
        }
    }

    let path = dir.join("edges.csv");
    let mut adjacency = Array2::<T>::zeros((n, n));
    for (u, v, w) in load_edge_list(&path)? {
        if u >= n || v >= n {
            return Err(Error::NodeMismatch(format!("{}: edge ({u}, {v}) out of range", path.display())));
        }
        if u != v {
            adjacency[[u, v]] = T::of(w);
            adjacency[[v, u]] = T::of(w);
        }
    }
    let mut g = Graph::new(adjacency, features, labels)?;

    let path = dir.join("masks.csv");
    if path.exists() {
        let mut masks = Masks::empty(n);
        for (k, record) in csv_reader(&path)?.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| csv_error(&path, line, e))?;
            let node: usize = parse_field(&path, line, &record[0])?;
            if node >= n {
                return Err(Error::NodeMismatch(format!("{}:{line}: node {node}", path.display())));
            }
            match record.get(1).map(str::trim).unwrap_or("") {
                "train" => masks.train[node] = true,
                "val" => masks.val[node] = true,
                "test" => masks.test[node] = true,
                "" => {}
                other => return Err(parse_err(&path, line, format!("unknown split '{other}'"))),
            }
        }
        g = g.with_masks(masks)?;
    }
    Ok(g)
}
