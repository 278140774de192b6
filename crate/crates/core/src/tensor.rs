//! Dense row-major tensors and their on-disk formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

/// Row-major strides for `dims`.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if dims.is_empty() || n != values.len() {
            return Err(Error::Config(format!(
                "{} values do not fill a tensor of dims {dims:?}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {pos}")));
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let n = dims.iter().product();
        DenseTensor { dims, values: vec![value; n] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    /// FROSTT-style text: a `# dims:` header, then one line per nonzero entry with
    /// 1-based indices followed by the value.
    pub fn write_tns<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(w, "# dims: {}", dims.join(" "))?;
        let mut line = String::new();
        for (flat, &v) in self.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            line.clear();
            for i in self.multi_index(flat) {
                line.push_str(&(i + 1).to_string());
                line.push(' ');
            }
            // `{}` on f64 prints the shortest string that round-trips.
            line.push_str(&format!("{v}"));
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads FROSTT text. Without a `# dims:` header the extents are the largest
    /// index seen per mode. Entries not listed are zero.
    pub fn read_tns<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut header: Option<Vec<usize>> = None;
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(c) = t.strip_prefix('#') {
                if let Some(d) = c.trim().strip_prefix("dims:") {
                    let dims = d
                        .split_whitespace()
                        .map(|x| x.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::Parse(format!("line {}: bad dims header: {e}", lineno + 1)))?;
                    header = Some(dims);
                }
                continue;
            }
            let toks: Vec<&str> = t.split_whitespace().collect();
            if toks.len() < 2 {
                return Err(Error::Parse(format!("line {}: expected indices and a value", lineno + 1)));
            }
            let (ix, val) = toks.split_at(toks.len() - 1);
            let v: f64 = val[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value `{}`", lineno + 1, val[0])))?;
            let idx = ix
                .iter()
                .map(|s| match s.parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(Error::Parse(format!("line {}: bad index `{s}`", lineno + 1))),
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = entries.first() {
                if first.0.len() != idx.len() {
                    return Err(Error::Parse(format!("line {}: inconsistent order", lineno + 1)));
                }
            }
            entries.push((idx, v));
        }
        let dims = match header {
            Some(d) => d,
            None => {
                let first = entries
                    .first()
                    .ok_or_else(|| Error::Parse("empty tensor file without dims header".into()))?;
                let mut d = vec![0; first.0.len()];
                for (idx, _) in &entries {
                    for (k, &i) in idx.iter().enumerate() {
                        d[k] = d[k].max(i + 1);
                    }
                }
                d
            }
        };
        let mut t = DenseTensor::filled(dims, 0.0);
        for (idx, v) in entries {
            if idx.len() != t.order() || idx.iter().zip(t.dims()).any(|(&i, &d)| i >= d) {
                return Err(Error::Parse(format!("index {:?} outside dims {:?}", idx, t.dims())));
            }
            if !v.is_finite() {
                return Err(Error::Parse(format!("non-finite value at {idx:?}")));
            }
            let f = t.flat_index(&idx);
            t.values[f] = v;
        }
        Ok(t)
    }

    /// Binary layout: `TNSR`, u32 order, u64 per dim, then f64 values, all little-endian.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(b"TNSR")?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"TNSR" {
            return Err(Error::Parse("missing TNSR magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let order = u32::from_le_bytes(b4) as usize;
        if order == 0 || order > crate::sharing::MAX_ORDER {
            return Err(Error::Parse(format!("implausible order {order}")));
        }
        let mut b8 = [0u8; 8];
        let mut dims = Vec::with_capacity(order);
        for _ in 0..order {
            r.read_exact(&mut b8)?;
            dims.push(u64::from_le_bytes(b8) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Parse("dims overflow".into()))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        DenseTensor::new(dims, values).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Picks the format from the extension: `.tns` is text, anything else binary.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        if is_text(path) {
            self.write_tns(f)
        } else {
            self.write_binary(f)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        if is_text(path) {
            Self::read_tns(f)
        } else {
            Self::read_binary(f)
        }
    }
}

fn is_text(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tns"))
}

/// Read access to tensor entries, implemented by dense tensors and by bootstrap views.
pub trait EntrySource: Sync {
    fn dims(&self) -> &[usize];
    fn get(&self, idx: &[usize]) -> f64;
    fn mean(&self) -> f64;
}

impl EntrySource for DenseTensor {
    fn dims(&self) -> &[usize] {
        &self.dims
    }
    fn get(&self, idx: &[usize]) -> f64 {
        DenseTensor::get(self, idx)
    }
    fn mean(&self) -> f64 {
        DenseTensor::mean(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DenseTensor {
        let vals: Vec<f64> = (0..24).map(|i| if i % 5 == 0 { 0.0 } else { i as f64 * 0.25 }).collect();
        DenseTensor::new(vec![2, 3, 4], vals).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let t = sample();
        for f in 0..t.len() {
            assert_eq!(t.flat_index(&t.multi_index(f)), f);
        }
        assert_eq!(strides(&[2, 3, 4]), [12, 4, 1]);
    }

    #[test]
    fn tns_round_trip_keeps_zeros_and_dims() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_tns(&mut buf).unwrap();
        assert_eq!(DenseTensor::read_tns(&buf[..]).unwrap(), t);
    }

    #[test]
    fn tns_without_header_infers_dims() {
        let text = "# a comment\n1 1 2.5\n2 3 -1\n";
        let t = DenseTensor::read_tns(text.as_bytes()).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert_eq!(t.get(&[0, 0]), 2.5);
        assert_eq!(t.get(&[1, 2]), -1.0);
        assert_eq!(t.get(&[0, 1]), 0.0);
    }

    #[test]
    fn tns_rejects_garbage() {
        assert!(DenseTensor::read_tns("0 1 2\n".as_bytes()).is_err());
        assert!(DenseTensor::read_tns("1 x\n".as_bytes()).is_err());
        assert!(DenseTensor::read_tns("# dims: 2 2\n3 1 1\n".as_bytes()).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TNSR");
        assert_eq!(DenseTensor::read_binary(&buf[..]).unwrap(), t);
        assert!(DenseTensor::read_binary(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(DenseTensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
