//! Which page fields exist in archived channel pages, per capture quarter.
//!
//! The matrix starts at 2006Q3; earlier quarters use the 2006Q3 column and
//! quarters after 2023 use the 2023Q4 column.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Username,
    ChannelId,
    Handle,
    Description,
    Keywords,
    TotalViews,
    JoinDate,
    Subscribers,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Username,
        Field::ChannelId,
        Field::Handle,
        Field::Description,
        Field::Keywords,
        Field::TotalViews,
        Field::JoinDate,
        Field::Subscribers,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    Full,
    Partial,
    Absent,
}

fn qindex(year: i32, quarter: u32) -> i32 {
    let q = year * 4 + quarter.clamp(1, 4) as i32 - 1;
    q.clamp(2006 * 4 + 2, 2023 * 4 + 3)
}

fn q(year: i32, quarter: u32) -> i32 {
    year * 4 + quarter as i32 - 1
}

pub fn availability(field: Field, year: i32, quarter: u32) -> Availability {
    use Availability::*;
    let i = qindex(year, quarter);
    match field {
        Field::Username => {
            if i <= q(2020, 4) {
                Full
            } else {
                Absent
            }
        }
        Field::ChannelId => {
            if i <= q(2007, 2) {
                Absent
            } else if i <= q(2011, 4) {
                Partial
            } else {
                Full
            }
        }
        Field::Handle => {
            if i <= q(2022, 3) {
                Absent
            } else if i == q(2022, 4) {
                Partial
            } else {
                Full
            }
        }
        Field::Keywords => {
            if i <= q(2010, 2) {
                Absent
            } else if i == q(2010, 3) {
                Partial
            } else {
                Full
            }
        }
        Field::TotalViews | Field::JoinDate => {
            if i <= q(2013, 1) {
                Full
            } else if i == q(2013, 2) {
                Partial
            } else {
                Absent
            }
        }
        Field::Description | Field::Subscribers => Full,
    }
}

/// False when `present` contradicts a fully-absent cell.
pub fn permits(field: Field, year: i32, quarter: u32, present: bool) -> bool {
    !(present && availability(field, year, quarter) == Availability::Absent)
}
