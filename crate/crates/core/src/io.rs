//! Plain-text formats for networks, kernels and signals.
//!
//! ```text
//! densecap-net v1
//! L d0 dL d B
//! W 1
//! <d_1 rows of d_0 reals>
//! b 1 <d_1 reals>
//! ...
//! ```
//!
//! Kernels start with `densecap-kernel v1`, then `n L d0 dL B`, then `n`
//! rows of `n` reals on the equipartition. A kernel without layer structure
//! writes `0 0 0 0` for `L d0 dL B`. Signals start with `densecap-signal v1`,
//! then `n`, then one row of `n` reals. Reals are written in the shortest
//! form that parses back to the same bits.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::computational::ComputationalKernel;
use crate::error::{Error, Result};
use crate::kernel::{StepKernel, StepSignal};
use crate::layers::LayerStructure;
use crate::net::DenseNetwork;
use crate::partition::Partition;

pub const NET_HEADER: &str = "densecap-net v1";
pub const KERNEL_HEADER: &str = "densecap-kernel v1";
pub const SIGNAL_HEADER: &str = "densecap-signal v1";

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").expect("writing to a String cannot fail");
    }
    s
}

pub fn write_network(net: &DenseNetwork) -> String {
    let s = net.shape();
    let mut out = format!(
        "{NET_HEADER}\n{} {} {} {} {:?}\n",
        s.depth(),
        s.input_dim(),
        s.output_dim(),
        s.hidden_dim(),
        net.bound()
    );
    for l in 1..=s.depth() {
        out.push_str(&format!("W {l}\n"));
        for row in net.weights(l).rows() {
            out.push_str(&join(row.iter().copied()));
            out.push('\n');
        }
        out.push_str(&format!("b {l} {}\n", join(net.bias(l).iter().copied())));
    }
    out
}

/// Line cursor that skips blank lines and reports 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate().peekable(), last: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let t = line.trim();
            if !t.is_empty() {
                return Ok((i + 1, t));
            }
        }
        Err(Error::parse(self.last + 1, format!("missing section {what}")))
    }

    fn finish(&mut self) -> Result<()> {
        match self.inner.by_ref().find(|(_, l)| !l.trim().is_empty()) {
            Some((i, _)) => Err(Error::parse(i + 1, "unexpected trailing content")),
            None => Ok(()),
        }
    }
}

fn parse_field<T: FromStr>(line: usize, field: &str, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("field {name}: cannot parse {field:?}")))
}

fn parse_reals(line: usize, fields: &[&str], expected: usize, what: &str) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(Error::parse(line, format!("{what}: expected {expected} values, found {}", fields.len())));
    }
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| parse_field::<f64>(line, f, &format!("{what}[{k}]")))
        .collect()
}

fn expect_header(lines: &mut Lines, header: &str) -> Result<()> {
    let (no, line) = lines.next("header")?;
    if line != header {
        return Err(Error::parse(no, format!("expected header {header:?}, found {line:?}")));
    }
    Ok(())
}

pub fn read_network(text: &str) -> Result<DenseNetwork> {
    let mut lines = Lines::new(text);
    expect_header(&mut lines, NET_HEADER)?;
    let (no, dims) = lines.next("dimensions")?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 5 {
        return Err(Error::parse(no, "dimensions: expected `L d0 dL d B`"));
    }
    let depth: usize = parse_field(no, f[0], "L")?;
    let d0: usize = parse_field(no, f[1], "d0")?;
    let dl: usize = parse_field(no, f[2], "dL")?;
    let d: usize = parse_field(no, f[3], "d")?;
    let bound: f64 = parse_field(no, f[4], "B")?;
    let shape = LayerStructure::new(depth, d0, dl, d).map_err(|e| Error::parse(no, e.to_string()))?;
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for l in 1..=depth {
        let (rows, cols) = (shape.width(l), shape.width(l - 1));
        let section = format!("W {l}");
        let (no, head) = lines.next(&section)?;
        if head != section {
            return Err(Error::parse(no, format!("expected {section:?}, found {head:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let (no, row) = lines.next(&format!("{section} row {i}"))?;
            let fields: Vec<&str> = row.split_whitespace().collect();
            data.extend(parse_reals(no, &fields, cols, &format!("W {l} row {i}"))?);
        }
        weights.push(Array2::from_shape_vec((rows, cols), data).expect("row lengths were checked"));
        let section = format!("b {l}");
        let (no, line) = lines.next(&section)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields[0] != "b" || fields[1] != l.to_string() {
            return Err(Error::parse(no, format!("expected {section:?}")));
        }
        biases.push(Array1::from(parse_reals(no, &fields[2..], rows, &section)?));
    }
    lines.finish()?;
    DenseNetwork::new(bound, weights, biases)
}

pub fn write_kernel(kernel: &StepKernel, layers: Option<(&LayerStructure, f64)>) -> Result<String> {
    if !kernel.partition().is_equipartition(kernel.len()) {
        return Err(Error::InvalidPartition("only equipartition kernels can be written".into()));
    }
    let n = kernel.len();
    let header = match layers {
        Some((s, b)) => format!("{n} {} {} {} {b:?}", s.depth(), s.input_dim(), s.output_dim()),
        None => format!("{n} 0 0 0 0"),
    };
    let mut out = format!("{KERNEL_HEADER}\n{header}\n");
    for row in kernel.coeffs().rows() {
        out.push_str(&join(row.iter().copied()));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_computational(kernel: &ComputationalKernel) -> String {
    write_kernel(kernel.kernel(), Some((kernel.layers(), kernel.bound()))).expect("computational kernels live on the equipartition")
}

/// A parsed kernel file: the kernel and, when present, its layer data.
#[derive(Clone, Debug)]
pub struct KernelFile {
    pub kernel: StepKernel,
    pub layers: Option<(LayerStructure, f64)>,
}

impl KernelFile {
    /// Wraps the kernel as a computational kernel; fails when the file has
    /// no layer data or the conditions do not hold.
    pub fn computational(&self) -> Result<ComputationalKernel> {
        let (layers, bound) = self
            .layers
            .ok_or_else(|| Error::Precondition("the kernel file carries no layer structure".into()))?;
        ComputationalKernel::from_step_kernel(self.kernel.clone(), layers, bound)
    }
}

pub fn read_kernel(text: &str) -> Result<KernelFile> {
    let mut lines = Lines::new(text);
    expect_header(&mut lines, KERNEL_HEADER)?;
    let (no, dims) = lines.next("dimensions")?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 5 {
        return Err(Error::parse(no, "dimensions: expected `n L d0 dL B`"));
    }
    let n: usize = parse_field(no, f[0], "n")?;
    let depth: usize = parse_field(no, f[1], "L")?;
    let d0: usize = parse_field(no, f[2], "d0")?;
    let dl: usize = parse_field(no, f[3], "dL")?;
    let bound: f64 = parse_field(no, f[4], "B")?;
    let layers = if depth == 0 {
        None
    } else {
        if !n.is_multiple_of(depth + 2) {
            return Err(Error::parse(no, format!("n = {n} is not a multiple of L + 2 = {}", depth + 2)));
        }
        let s = LayerStructure::new(depth, d0, dl, n / (depth + 2)).map_err(|e| Error::parse(no, e.to_string()))?;
        Some((s, bound))
    };
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let (no, row) = lines.next(&format!("row {i}"))?;
        let fields: Vec<&str> = row.split_whitespace().collect();
        data.extend(parse_reals(no, &fields, n, &format!("row {i}"))?);
    }
    lines.finish()?;
    let kernel = StepKernel::new(
        Partition::equipartition(n)?,
        Array2::from_shape_vec((n, n), data).expect("row lengths were checked"),
    )?;
    Ok(KernelFile { kernel, layers })
}

pub fn write_signal(signal: &StepSignal) -> Result<String> {
    let n = signal.partition().len();
    if !signal.partition().is_equipartition(n) {
        return Err(Error::InvalidPartition("only equipartition signals can be written".into()));
    }
    Ok(format!("{SIGNAL_HEADER}\n{n}\n{}\n", join(signal.values().iter().copied())))
}

pub fn read_signal(text: &str) -> Result<StepSignal> {
    let mut lines = Lines::new(text);
    expect_header(&mut lines, SIGNAL_HEADER)?;
    let (no, count) = lines.next("length")?;
    let n: usize = parse_field(no, count, "n")?;
    let (no, row) = lines.next("values")?;
    let fields: Vec<&str> = row.split_whitespace().collect();
    let values = parse_reals(no, &fields, n, "values")?;
    lines.finish()?;
    StepSignal::new(Partition::equipartition(n)?, Array1::from(values))
}
