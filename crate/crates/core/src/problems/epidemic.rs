use std::path::Path;

use crate::error::{Error, Result};

/// Observed S/I/R counts over time for a closed population.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicSeries {
    times: Vec<f64>,
    susceptible: Vec<u64>,
    infected: Vec<u64>,
    recovered: Vec<u64>,
    population: u64,
}

impl EpidemicSeries {
    /// Validates shape, time ordering, and `S + I + R = N` at every row,
    /// with `N` taken from the first row.
    pub fn new(times: Vec<f64>, s: Vec<u64>, i: Vec<u64>, r: Vec<u64>) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::Data("series has no observations".into()));
        }
        if s.len() != n || i.len() != n || r.len() != n {
            return Err(Error::Data("columns have different lengths".into()));
        }
        let population = s[0] + i[0] + r[0];
        if population == 0 {
            return Err(Error::Data("population is zero".into()));
        }
        for k in 0..n {
            if !(times[k].is_finite() && times[k] >= 0.0) {
                return Err(Error::Data(format!("invalid time {} at row {k}", times[k])));
            }
            if k > 0 && times[k] <= times[k - 1] {
                return Err(Error::Data(format!(
                    "times not increasing at t={}",
                    times[k]
                )));
            }
            let total = s[k] + i[k] + r[k];
            if total != population {
                return Err(Error::Data(format!(
                    "conservation violated at t={}: S+I+R={total}, expected N={population}",
                    times[k]
                )));
            }
        }
        Ok(Self {
            times,
            susceptible: s,
            infected: i,
            recovered: r,
            population,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn susceptible(&self) -> &[u64] {
        &self.susceptible
    }

    pub fn infected(&self) -> &[u64] {
        &self.infected
    }

    pub fn recovered(&self) -> &[u64] {
        &self.recovered
    }

    /// `(S, I, R)` at row `k`.
    pub fn state(&self, k: usize) -> (u64, u64, u64) {
        (self.susceptible[k], self.infected[k], self.recovered[k])
    }

    /// Keep every `stride`-th row, starting with the first.
    pub fn thin(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let pick = |v: &[u64]| v.iter().step_by(stride).copied().collect::<Vec<_>>();
        Self {
            times: self.times.iter().step_by(stride).copied().collect(),
            susceptible: pick(&self.susceptible),
            infected: pick(&self.infected),
            recovered: pick(&self.recovered),
            population: self.population,
        }
    }

    /// Rows up to and including the first time `I` reaches zero.
    pub fn until_extinction(&self) -> Self {
        let end = self
            .infected
            .iter()
            .position(|&i| i == 0)
            .map_or(self.len(), |k| k + 1);
        Self {
            times: self.times[..end].to_vec(),
            susceptible: self.susceptible[..end].to_vec(),
            infected: self.infected[..end].to_vec(),
            recovered: self.recovered[..end].to_vec(),
            population: self.population,
        }
    }

    /// Total ever infected, `N − S_final`.
    pub fn final_size(&self) -> u64 {
        self.population - self.susceptible[self.len() - 1]
    }

    /// CSV text with header `t,S,I,R`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,S,I,R\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.times[k], self.susceptible[k], self.infected[k], self.recovered[k]
            ));
        }
        out
    }
}

/// Parse `t,S,I,R` CSV text.
pub fn parse_epidemic_csv(text: &str) -> Result<EpidemicSeries> {
    if text.trim().is_empty() {
        return Err(Error::Data("empty file".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("line 1: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["t", "S", "I", "R"] {
        return Err(Error::Data(format!(
            "line 1: expected header t,S,I,R, found {}",
            names.join(",")
        )));
    }

    let (mut t, mut s, mut i, mut r) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Data(format!("line {line}: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(Error::Data(format!(
                "line {line}: expected 4 fields, found {}",
                row.len()
            )));
        }
        let time: f64 = row[0]
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: invalid time '{}'", &row[0])))?;
        let count = |k: usize| -> Result<u64> {
            row[k].parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: invalid count '{}' in column {}",
                    &row[k], names[k]
                ))
            })
        };
        t.push(time);
        s.push(count(1)?);
        i.push(count(2)?);
        r.push(count(3)?);
    }
    EpidemicSeries::new(t, s, i, r)
}

/// Read a `t,S,I,R` file. The population is inferred from the first row.
pub fn load_epidemic_csv(path: impl AsRef<Path>) -> Result<EpidemicSeries> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_epidemic_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let s = parse_epidemic_csv("t,S,I,R\n0,187,1,0\n1,185,3,0\n").unwrap();
        assert_eq!(s.population(), 188);
        assert_eq!(s.len(), 2);
        assert_eq!(s.state(1), (185, 3, 0));
    }

    #[test]
    fn conservation_violation_names_time() {
        let err = parse_epidemic_csv("t,S,I,R\n0,187,1,0\n1,185,3,0\n2,180,3,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conservation") && msg.contains("t=2"), "{msg}");
    }

    #[test]
    fn empty_and_header_errors() {
        assert!(parse_epidemic_csv("").is_err());
        assert!(parse_epidemic_csv("t,S,I,R\n").is_err());
        assert!(parse_epidemic_csv("time,S,I,R\n0,1,1,0\n").is_err());
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_epidemic_csv("t,S,I,R\n0,187,1,0\n1,18x,3,0\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_epidemic_csv("t,S,I,R\n0,187,1,0\n1,185,3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn csv_text_round_trips() {
        let s = EpidemicSeries::new(vec![0.0, 1.5], vec![10, 8], vec![1, 2], vec![0, 1]).unwrap();
        assert_eq!(parse_epidemic_csv(&s.to_csv()).unwrap(), s);
    }

    #[test]
    fn thinning_and_extinction() {
        let s = EpidemicSeries::new(
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            vec![5, 4, 4, 4, 4],
            vec![1, 2, 1, 0, 0],
            vec![0, 0, 1, 2, 2],
        )
        .unwrap();
        assert_eq!(s.thin(2).times(), &[0.0, 2.0, 4.0]);
        assert_eq!(s.until_extinction().len(), 4);
        assert_eq!(s.final_size(), 2);
    }
}
