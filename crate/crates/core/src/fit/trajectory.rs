use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A fixed-length sequence of `d`-dimensional points, equally spaced in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, points: Vec<DVector<f64>>) -> Result<Self> {
        let id = id.into();
        let d = points.first().map_or(0, |p| p.len());
        if points.is_empty() || d == 0 {
            return Err(Error::InvalidParameter(format!("trajectory `{id}` is empty")));
        }
        for p in &points {
            if p.len() != d {
                return Err(Error::dim(d, p.len(), "trajectory point"));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "trajectory `{id}` has non-finite coordinates"
                )));
            }
        }
        Ok(Self { id, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Time-major flattening.
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len() * self.dim(),
            self.points.iter().flat_map(|p| p.iter().copied()),
        )
    }
}

/// Checks a non-empty dataset of equal-length, equal-dimension trajectories; returns `(N, d)`.
pub fn dataset_shape(data: &[Trajectory]) -> Result<(usize, usize)> {
    let first = data.first().ok_or(Error::InvalidCount {
        count: 0,
        reason: "dataset is empty",
    })?;
    let (n, d) = (first.len(), first.dim());
    for t in data {
        if t.len() != n {
            return Err(Error::dim(n, t.len(), "trajectory length"));
        }
        if t.dim() != d {
            return Err(Error::dim(d, t.dim(), "trajectory dimension"));
        }
    }
    Ok((n, d))
}

/// Writes `traj_id,step,dim0,…,dim{d-1}` CSV.
pub fn write_trajectories_csv<W: Write>(out: W, data: &[Trajectory]) -> Result<()> {
    let d = data.first().map_or(0, Trajectory::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["traj_id".to_string(), "step".to_string()];
    header.extend((0..d).map(|a| format!("dim{a}")));
    let io = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: e.into(),
    };
    w.write_record(&header).map_err(io)?;
    for t in data {
        for (s, p) in t.points.iter().enumerate() {
            let mut rec = vec![t.id.clone(), s.to_string()];
            rec.extend(p.iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<csv>".into(),
        source,
    })
}

/// Parses trajectory CSV. Rows of one trajectory must carry steps `0, 1, 2, …` in order;
/// trajectories keep the order of their first appearance. Errors carry the 1-based line.
pub fn read_trajectories_csv<R: Read>(input: R, path: &Path) -> Result<Vec<Trajectory>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "traj_id" || &header[1] != "step" {
        return Err(parse_err(
            1,
            "header must be `traj_id,step,dim0,...`".to_string(),
        ));
    }
    let d = header.len() - 2;
    for (a, name) in header.iter().skip(2).enumerate() {
        if name != format!("dim{a}") {
            return Err(parse_err(1, format!("expected column `dim{a}`, found `{name}`")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, (Vec<DVector<f64>>, u64)> =
        std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 2 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 2, rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty traj_id".into()));
        }
        let step: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid step `{}`", &rec[1])))?;
        let mut p = DVector::zeros(d);
        for a in 0..d {
            let v: f64 = rec[a + 2]
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number `{}`", &rec[a + 2])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{}`", &rec[a + 2])));
            }
            p[a] = v;
        }
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), line)
        });
        if step != entry.0.len() {
            return Err(parse_err(
                line,
                format!(
                    "trajectory `{id}`: expected step {}, found {step}",
                    entry.0.len()
                ),
            ));
        }
        entry.0.push(p);
        entry.1 = line;
    }
    if order.is_empty() {
        return Err(parse_err(1, "no trajectories".into()));
    }
    let n = by_id[&order[0]].0.len();
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let (points, last_line) = by_id.remove(&id).expect("id recorded");
        if points.len() != n {
            return Err(parse_err(
                last_line,
                format!("trajectory `{id}` has {} steps, expected {n}", points.len()),
            ));
        }
        out.push(Trajectory { id, points });
    }
    Ok(out)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trajectories_csv(std::io::BufReader::new(f), path)
}

pub fn save_trajectories(path: &Path, data: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trajectories_csv(std::io::BufWriter::new(f), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn parse(s: &str) -> Result<Vec<Trajectory>> {
        read_trajectories_csv(s.as_bytes(), Path::new("t.csv"))
    }

    #[test]
    fn csv_round_trip() {
        let data = vec![
            Trajectory::new("a", vec![dvector![0.0, 1.5], dvector![0.25, -2.0]]).unwrap(),
            Trajectory::new("b", vec![dvector![1.0 / 3.0, 4.0], dvector![5.0, 6.0]]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("traj_id,step,dim0,dim1\na,0,0,1.5\n"));
        assert_eq!(parse(&text).unwrap(), data);
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad_num = "traj_id,step,dim0\na,0,1.0\na,1,x\n";
        match parse(bad_num) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let gap = "traj_id,step,dim0\na,0,1.0\na,2,1.0\n";
        assert!(matches!(parse(gap), Err(Error::Parse { line: 3, .. })));
        let ragged = "traj_id,step,dim0\na,0,1.0\na,1,2.0\nb,0,1.0\n";
        assert!(matches!(parse(ragged), Err(Error::Parse { line: 4, .. })));
        let header = "id,step,dim0\na,0,1\n";
        assert!(matches!(parse(header), Err(Error::Parse { line: 1, .. })));
        let fields = "traj_id,step,dim0\na,0,1.0,2.0\n";
        assert!(matches!(parse(fields), Err(Error::Parse { line: 2, .. })));
        assert!(parse("traj_id,step,dim0\n").is_err());
        assert!(parse("traj_id,step,dim0\na,0,NaN\n").is_err());
    }

    #[test]
    fn interleaved_ids_keep_first_appearance_order() {
        let s = "traj_id,step,dim0\nb,0,1\na,0,2\nb,1,3\na,1,4\n";
        let data = parse(s).unwrap();
        assert_eq!(data[0].id, "b");
        assert_eq!(data[1].points, vec![dvector![2.0], dvector![4.0]]);
    }

    #[test]
    fn dataset_shape_checks() {
        let a = Trajectory::new("a", vec![dvector![0.0]; 3]).unwrap();
        let b = Trajectory::new("b", vec![dvector![0.0]; 4]).unwrap();
        assert_eq!(dataset_shape(std::slice::from_ref(&a)).unwrap(), (3, 1));
        assert!(dataset_shape(&[a, b]).is_err());
        assert!(dataset_shape(&[]).is_err());
        assert!(Trajectory::new("x", vec![]).is_err());
        assert!(Trajectory::new("x", vec![dvector![f64::INFINITY]]).is_err());
    }
}
