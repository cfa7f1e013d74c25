//! Reports, groups and the evolving group store.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unix seconds.
pub type Timestamp = i64;

pub type GroupId = String;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Groups that have not received a report for more than this many days do
/// not accept new reports.
pub const DEFAULT_STALENESS_DAYS: i64 = 62;

/// One stack frame: a fully qualified method name such as
/// `org.netbeans.core.Window.paint`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Frame(String);

impl Frame {
    /// Trims surrounding whitespace and rejects empty tokens or tokens with
    /// interior whitespace.
    pub fn new(token: impl AsRef<str>) -> Result<Self> {
        let token = token.as_ref().trim();
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::InvalidFrame(token.to_owned()));
        }
        Ok(Frame(token.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Frame {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Frame::new(value)
    }
}

impl From<Frame> for String {
    fn from(frame: Frame) -> String {
        frame.0
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A single crash report. Frames are ordered innermost call first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub timestamp: Timestamp,
    pub frames: Vec<Frame>,
    #[serde(rename = "group_id", default, skip_serializing_if = "Option::is_none")]
    pub group_label: Option<GroupId>,
}

impl Report {
    pub fn new<I, S>(id: impl Into<String>, timestamp: Timestamp, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let id = id.into();
        let frames = frames
            .into_iter()
            .map(Frame::new)
            .collect::<Result<Vec<_>>>()?;
        if frames.is_empty() {
            return Err(Error::EmptyFrames(id));
        }
        Ok(Report {
            id,
            timestamp,
            frames,
            group_label: None,
        })
    }

    pub fn with_label(mut self, group: impl Into<GroupId>) -> Self {
        self.group_label = Some(group.into());
        self
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.frames.iter().map(Frame::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: GroupId,
    /// Report ids in attachment order.
    pub members: Vec<String>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

/// Groups and the reports attached to them.
///
/// Mutation is single-writer. Scoring workers share `&GroupStore` snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStore {
    groups: BTreeMap<GroupId, Group>,
    reports: HashMap<String, Report>,
    staleness_window_days: i64,
}

impl Default for GroupStore {
    fn default() -> Self {
        GroupStore::new(DEFAULT_STALENESS_DAYS)
    }
}

impl GroupStore {
    pub fn new(staleness_window_days: i64) -> Self {
        GroupStore {
            groups: BTreeMap::new(),
            reports: HashMap::new(),
            staleness_window_days,
        }
    }

    pub fn staleness_window_days(&self) -> i64 {
        self.staleness_window_days
    }

    /// Appends `report` to `group_id`, creating the group if it does not
    /// exist yet.
    pub fn attach_report(&mut self, report: Report, group_id: &str) -> Result<()> {
        if self.reports.contains_key(&report.id) {
            return Err(Error::DuplicateReport(report.id));
        }
        let ts = report.timestamp;
        match self.groups.get_mut(group_id) {
            Some(group) => {
                group.members.push(report.id.clone());
                group.updated_at = group.updated_at.max(ts);
                group.created_at = group.created_at.min(ts);
            }
            None => {
                self.groups.insert(
                    group_id.to_owned(),
                    Group {
                        id: group_id.to_owned(),
                        members: vec![report.id.clone()],
                        created_at: ts,
                        updated_at: ts,
                    },
                );
            }
        }
        self.reports.insert(report.id.clone(), report);
        Ok(())
    }

    /// Attaches a report to the group named by its own label.
    pub fn attach_labeled(&mut self, report: Report) -> Result<()> {
        let label = report
            .group_label
            .clone()
            .ok_or_else(|| Error::Unlabeled(report.id.clone()))?;
        self.attach_report(report, &label)
    }

    /// Ids of groups still accepting reports at `query_time`, in id order.
    ///
    /// A group is closed only when the gap since its last update strictly
    /// exceeds the staleness window.
    pub fn open_groups(&self, query_time: Timestamp) -> Vec<&str> {
        let window = self.staleness_window_days * SECONDS_PER_DAY;
        self.groups
            .values()
            .filter(|g| query_time - g.updated_at <= window)
            .map(|g| g.id.as_str())
            .collect()
    }

    pub fn group(&self, id: &str) -> Option<&Group> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn report(&self, id: &str) -> Option<&Report> {
        self.reports.get(id)
    }

    pub fn contains_group(&self, id: &str) -> bool {
        self.groups.contains_key(id)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn report_count(&self) -> usize {
        self.reports.len()
    }

    /// Members of `group` resolved to reports, in attachment order.
    pub fn members<'a>(&'a self, group: &'a Group) -> impl Iterator<Item = &'a Report> + 'a {
        group
            .members
            .iter()
            .map(move |id| &self.reports[id.as_str()])
    }
}
