//! Quarterly holdings CSV parsing and id bookkeeping.
//!
//! Expected header (exact): `quarter,holder_id,fund_id,market_value,category,strategy,issuer`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Edge};

pub const HOLDINGS_HEADER: [&str; 7] = [
    "quarter",
    "holder_id",
    "fund_id",
    "market_value",
    "category",
    "strategy",
    "issuer",
];

/// Calendar quarter, ordered chronologically. Text form `YYYYQn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarter {
    pub year: u16,
    pub q: u8,
}

impl Quarter {
    pub fn new(year: u16, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::InvalidArgument(format!("quarter number {q} not in 1..=4")));
        }
        Ok(Self { year, q })
    }

    pub fn next(self) -> Self {
        if self.q == 4 {
            Self { year: self.year + 1, q: 1 }
        } else {
            Self { year: self.year, q: self.q + 1 }
        }
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}Q{}", self.year, self.q)
    }
}

impl TryFrom<String> for Quarter {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("quarter {s:?} is not of the form YYYYQn"));
        let bytes = s.as_bytes();
        if bytes.len() != 6 || bytes[4] != b'Q' || !s[..4].bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let year: u16 = s[..4].parse().map_err(|_| bad())?;
        let q: u8 = s[5..].parse().map_err(|_| bad())?;
        Quarter::new(year, q).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Position {
    pub quarter: Quarter,
    pub holder_id: String,
    pub fund_id: String,
    pub market_value: f64,
    pub category: String,
    pub strategy: String,
    pub issuer: String,
}

/// Bijection between string ids and dense indices, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = Self::new();
        for id in ids {
            index.get_or_insert(id);
        }
        index
    }

    pub fn get_or_insert(&mut self, id: impl Into<String>) -> usize {
        let id = id.into();
        if let Some(&i) = self.lookup.get(&id) {
            return i;
        }
        let i = self.ids.len();
        self.lookup.insert(id.clone(), i);
        self.ids.push(id);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True when every id of `self` keeps the same index in `other`.
    pub fn is_prefix_of(&self, other: &IdIndex) -> bool {
        self.ids.len() <= other.ids.len() && self.ids.iter().zip(&other.ids).all(|(a, b)| a == b)
    }
}

/// All positions of one quarter, with at most one position per
/// (holder, fund) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterSnapshot {
    pub quarter: Quarter,
    pub positions: Vec<Position>,
    pub holder_index: IdIndex,
    pub fund_index: IdIndex,
}

impl QuarterSnapshot {
    /// Aggregates positions (summing duplicates) and assigns indices in
    /// first-appearance order.
    pub fn from_positions(quarter: Quarter, positions: Vec<Position>) -> Result<Self> {
        Self::with_index(quarter, positions, IdIndex::new(), IdIndex::new())
    }

    /// Like [`from_positions`](Self::from_positions) but starting from
    /// existing id maps; unseen ids are appended.
    pub fn with_index(
        quarter: Quarter,
        positions: Vec<Position>,
        mut holder_index: IdIndex,
        mut fund_index: IdIndex,
    ) -> Result<Self> {
        let mut merged: Vec<Position> = Vec::new();
        let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
        for p in positions {
            if p.quarter != quarter {
                return Err(Error::InvalidArgument(format!(
                    "position for {} in snapshot {}",
                    p.quarter, quarter
                )));
            }
            let h = holder_index.get_or_insert(p.holder_id.as_str());
            let f = fund_index.get_or_insert(p.fund_id.as_str());
            match slot.get(&(h, f)) {
                Some(&i) => merged[i].market_value += p.market_value,
                None => {
                    slot.insert((h, f), merged.len());
                    merged.push(p);
                }
            }
        }
        Ok(Self {
            quarter,
            positions: merged,
            holder_index,
            fund_index,
        })
    }

    /// Re-expresses the snapshot under wider id maps that extend its own.
    pub fn reindexed(&self, holder_index: &IdIndex, fund_index: &IdIndex) -> Result<Self> {
        for p in &self.positions {
            if holder_index.get(&p.holder_id).is_none() || fund_index.get(&p.fund_id).is_none() {
                return Err(Error::IdSpaceMismatch(format!(
                    "position ({}, {}) not covered by the shared id maps",
                    p.holder_id, p.fund_id
                )));
            }
        }
        Ok(Self {
            quarter: self.quarter,
            positions: self.positions.clone(),
            holder_index: holder_index.clone(),
            fund_index: fund_index.clone(),
        })
    }

    pub fn num_holders(&self) -> usize {
        self.holder_index.len()
    }

    pub fn num_funds(&self) -> usize {
        self.fund_index.len()
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.positions
            .iter()
            .map(|p| {
                (
                    self.holder_index.get(&p.holder_id).expect("indexed on construction"),
                    self.fund_index.get(&p.fund_id).expect("indexed on construction"),
                )
            })
            .collect()
    }

    pub fn graph(&self) -> Result<BipartiteGraph> {
        BipartiteGraph::build(self.num_holders(), self.num_funds(), &self.edges())
    }

    /// Total market value per holder index.
    pub fn holder_aum(&self) -> Vec<f64> {
        let mut aum = vec![0.0; self.num_holders()];
        for p in &self.positions {
            aum[self.holder_index.get(&p.holder_id).expect("indexed")] += p.market_value;
        }
        aum
    }
}

/// Holder and fund id maps covering several snapshots, in the order given.
pub fn shared_index(snapshots: &[&QuarterSnapshot]) -> (IdIndex, IdIndex) {
    let mut holders = IdIndex::new();
    let mut funds = IdIndex::new();
    for s in snapshots {
        for id in s.holder_index.ids() {
            holders.get_or_insert(id.as_str());
        }
        for id in s.fund_index.ids() {
            funds.get_or_insert(id.as_str());
        }
    }
    (holders, funds)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a holdings CSV into one snapshot per quarter, ordered by quarter.
pub fn parse_holdings<R: Read>(reader: R) -> Result<BTreeMap<Quarter, QuarterSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().ne(HOLDINGS_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("header must be {}", HOLDINGS_HEADER.join(",")),
        ));
    }
    let mut by_quarter: BTreeMap<Quarter, Vec<Position>> = BTreeMap::new();
    // Quarter order in the file decides nothing; index order within a quarter
    // follows row order.
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<String> {
            let v = record.get(i).unwrap_or("").trim();
            if v.is_empty() {
                return Err(parse_err(line, format!("empty {}", HOLDINGS_HEADER[i])));
            }
            Ok(v.to_string())
        };
        let quarter: Quarter = field(0)?
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        let raw_value = field(3)?;
        let market_value: f64 = raw_value
            .parse()
            .map_err(|_| parse_err(line, format!("market_value {raw_value:?} is not a number")))?;
        if !market_value.is_finite() {
            return Err(parse_err(line, format!("market_value {raw_value:?} is not finite")));
        }
        if market_value < 0.0 {
            return Err(Error::NegativeMarketValue {
                line,
                value: market_value,
            });
        }
        by_quarter.entry(quarter).or_default().push(Position {
            quarter,
            holder_id: field(1)?,
            fund_id: field(2)?,
            market_value,
            category: field(4)?,
            strategy: field(5)?,
            issuer: field(6)?,
        });
    }
    by_quarter
        .into_iter()
        .map(|(q, ps)| QuarterSnapshot::from_positions(q, ps).map(|s| (q, s)))
        .collect()
}

/// Writes positions in the holdings CSV format.
pub fn write_holdings<W: Write>(writer: W, positions: &[Position]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HOLDINGS_HEADER).map_err(io)?;
    for p in positions {
        let value = format!("{}", p.market_value);
        let quarter = p.quarter.to_string();
        w.write_record([
            quarter.as_str(),
            &p.holder_id,
            &p.fund_id,
            &value,
            &p.category,
            &p.strategy,
            &p.issuer,
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "quarter,holder_id,fund_id,market_value,category,strategy,issuer\n";

    #[test]
    fn duplicates_are_summed() {
        let csv = format!(
            "{HEADER}2021Q4,h1,f1,10,Equity,passive,X\n2021Q4,h1,f1,5,Equity,passive,X\n"
        );
        let snaps = parse_holdings(csv.as_bytes()).unwrap();
        let s = &snaps[&"2021Q4".parse().unwrap()];
        assert_eq!(s.positions.len(), 1);
        assert_eq!(s.positions[0].market_value, 15.0);
    }

    #[test]
    fn header_only_is_empty() {
        let snaps = parse_holdings(HEADER.as_bytes()).unwrap();
        assert_eq!(snaps.values().map(|s| s.positions.len()).sum::<usize>(), 0);
    }

    #[test]
    fn holder_indices_follow_first_appearance() {
        let csv = format!(
            "{HEADER}2021Q4,c,f1,1,E,p,X\n2021Q4,a,f1,1,E,p,X\n2021Q4,c,f2,1,E,p,X\n2021Q4,b,f1,1,E,p,X\n"
        );
        let snaps = parse_holdings(csv.as_bytes()).unwrap();
        let s = snaps.values().next().unwrap();
        assert_eq!(s.holder_index.len(), 3);
        assert_eq!(s.holder_index.ids(), &["c", "a", "b"]);
        assert_eq!(s.holder_index.get("b"), Some(2));
    }

    #[test]
    fn quoted_fields() {
        let csv = format!("{HEADER}2021Q4,\"Smith, Jones & Co\",f1,2.5,\"Equity, US\",active,\"X \"\"Y\"\"\"\n");
        let snaps = parse_holdings(csv.as_bytes()).unwrap();
        let p = &snaps.values().next().unwrap().positions[0];
        assert_eq!(p.holder_id, "Smith, Jones & Co");
        assert_eq!(p.category, "Equity, US");
        assert_eq!(p.issuer, "X \"Y\"");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let csv = format!("{HEADER}2021Q4,h,f,1,E,p,X\n2021Q4,h,f,abc,E,p,X\n");
        assert!(matches!(parse_holdings(csv.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let csv = format!("{HEADER}2021Q4,h,f,-1,E,p,X\n");
        assert_eq!(
            parse_holdings(csv.as_bytes()),
            Err(Error::NegativeMarketValue { line: 2, value: -1.0 })
        );
        let csv = format!("{HEADER}2021Q4,h,f,1,E,p\n");
        assert!(matches!(parse_holdings(csv.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let csv = format!("{HEADER}2021-4,h,f,1,E,p,X\n");
        assert!(matches!(parse_holdings(csv.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let csv = format!("{HEADER}2021Q4,,f,1,E,p,X\n");
        assert!(matches!(parse_holdings(csv.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse_holdings("quarter,holder\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_parse() {
        let q: Quarter = "2022Q1".parse().unwrap();
        let positions = vec![Position {
            quarter: q,
            holder_id: "h,1".into(),
            fund_id: "f".into(),
            market_value: 123456.789,
            category: "Bond".into(),
            strategy: "active".into(),
            issuer: "I".into(),
        }];
        let mut buf = Vec::new();
        write_holdings(&mut buf, &positions).unwrap();
        let snaps = parse_holdings(buf.as_slice()).unwrap();
        assert_eq!(snaps[&q].positions, positions);
    }

    #[test]
    fn quarter_order_and_format() {
        let a: Quarter = "2021Q4".parse().unwrap();
        assert_eq!(a.next().to_string(), "2022Q1");
        assert!(a < a.next());
        assert!("2021Q5".parse::<Quarter>().is_err());
    }
}
