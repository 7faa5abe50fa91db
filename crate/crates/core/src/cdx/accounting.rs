use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::SnapshotRef;
use crate::identifiers::{parse_channel_url, Family};
use crate::par::{self, Execution};

/// Capture counts per (identifier family, capture year).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FormatYearCounts {
    pub counts: BTreeMap<(Family, i32), u64>,
    /// Rows whose URL did not classify, by capture year.
    pub unclassified: BTreeMap<i32, u64>,
}

impl FormatYearCounts {
    pub fn get(&self, family: Family, year: i32) -> u64 {
        self.counts.get(&(family, year)).copied().unwrap_or(0)
    }

    pub fn unclassified_total(&self) -> u64 {
        self.unclassified.values().sum()
    }

    pub fn classified_total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty() && self.unclassified.is_empty()
    }

    fn add(mut self, row: &SnapshotRef) -> Self {
        let year = row.timestamp.year();
        match parse_channel_url(&row.original_url) {
            Some(id) => *self.counts.entry((id.family, year)).or_default() += 1,
            None => *self.unclassified.entry(year).or_default() += 1,
        }
        self
    }

    fn merge(mut self, other: Self) -> Self {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_default() += v;
        }
        for (k, v) in other.unclassified {
            *self.unclassified.entry(k).or_default() += v;
        }
        self
    }

    /// Long-form CSV: `family,year,count`, unclassified rows last.
    pub fn write_long_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["family", "year", "count"])?;
        for ((family, year), n) in &self.counts {
            w.write_record([family.name(), &year.to_string(), &n.to_string()])?;
        }
        for (year, n) in &self.unclassified {
            w.write_record(["unclassified", &year.to_string(), &n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide CSV with one row per URL prefix and one column per year, laid out
    /// like the usual per-format capture table.
    pub fn write_pivot_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let years: Vec<i32> = {
            let mut ys: Vec<i32> = self
                .counts
                .keys()
                .map(|(_, y)| *y)
                .chain(self.unclassified.keys().copied())
                .collect();
            ys.sort_unstable();
            ys.dedup();
            ys
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["format".to_string()];
        header.extend(years.iter().map(i32::to_string));
        w.write_record(&header)?;
        let rows = [
            ("/user/", Family::Username),
            ("/channel/", Family::ChannelId),
            ("/c/", Family::CustomName),
            ("/@", Family::Handle),
            ("/profile?user=", Family::LegacyUsername),
            ("/", Family::VanityUsername),
        ];
        for (label, family) in rows {
            let mut rec = vec![label.to_string()];
            rec.extend(years.iter().map(|y| self.get(family, *y).to_string()));
            w.write_record(&rec)?;
        }
        let mut rec = vec!["unclassified".to_string()];
        rec.extend(
            years
                .iter()
                .map(|y| self.unclassified.get(y).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

/// Tallies rows by the family their URL classifies to and their capture year.
pub fn count_by_format_year(refs: &[SnapshotRef]) -> FormatYearCounts {
    count_by_format_year_with(Execution::auto(), refs)
}

pub fn count_by_format_year_with(exec: Execution, refs: &[SnapshotRef]) -> FormatYearCounts {
    par::fold_reduce(
        exec,
        refs,
        FormatYearCounts::default,
        FormatYearCounts::add,
        FormatYearCounts::merge,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdx::Status;
    use crate::timestamp::Timestamp;

    fn row(url: &str, ts: &str) -> SnapshotRef {
        SnapshotRef {
            original_url: url.into(),
            timestamp: Timestamp::parse(ts).unwrap(),
            status: Status::Code(200),
            digest: "D".into(),
            mime: "text/html".into(),
        }
    }

    #[test]
    fn empty_stream() {
        assert!(count_by_format_year(&[]).is_empty());
    }

    #[test]
    fn direct_tally() {
        let rows = vec![
            row("https://www.youtube.com/user/a", "20140101000000"),
            row("https://www.youtube.com/user/b", "20140201000000"),
            row("https://www.youtube.com/user/c", "20140301000000"),
            row(
                "https://www.youtube.com/channel/UCaaaaaaaaaaaaaaaaaaaaaa",
                "20140401000000",
            ),
        ];
        let counts = count_by_format_year(&rows);
        let expected = BTreeMap::from([((Family::Username, 2014), 3), ((Family::ChannelId, 2014), 1)]);
        assert_eq!(counts.counts, expected);
        assert_eq!(counts.unclassified_total(), 0);
    }

    #[test]
    fn unclassified_rows() {
        let rows = vec![
            row("https://www.youtube.com/watch?v=x", "20140101000000"),
            row("https://www.youtube.com/user/a", "20140101000000"),
        ];
        let counts = count_by_format_year(&rows);
        assert_eq!(counts.unclassified_total(), 1);
        assert_eq!(counts.classified_total(), 1);
        let mut out = Vec::new();
        counts.write_pivot_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("format,2014\n/user/,1\n"));
        assert!(text.ends_with("unclassified,1\n"));
    }
}
