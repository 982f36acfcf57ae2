//! Textual policy (`.acac`) and scenario (`.acsc`) languages.
//!
//! Both are line-oriented: one declaration or event per line, `#` starts a
//! comment, LF or CRLF accepted (the printer emits LF). Parsing is total —
//! every input yields either an AST or a non-empty list of [`ParseError`]s
//! with 1-based source spans — and `parse(pretty_print(x)) == x` for every
//! valid AST.
//!
//! Policy grammar:
//!
//! ```text
//! device <id> type=<id> [group=<id>,...] [location=<id>] [owner=<id>] [attr <name>=<value>]...
//! subject <id> kind=user|device [rel <name>-><id>]... [attr <name>=<value>]...
//! env <name> = <value>
//! limit <scope> <activity> <max>/<window>         # policy-level usage limit
//! rule on <object-pattern>:
//!   allow <op> by <source-pattern> as <activity>
//!   [pre <cond-expr>]
//!   [cur[*] <cond-expr>]
//!   [then <obligation> {; <obligation>}]
//!   [when[*] <context-expr>]
//!   [limit <scope> <activity> <max>/<window>]...
//! relation <kind> <a> <b> scope=<scope> [window=<dur>] [when <context-expr>] [detail ...]
//! ```
//!
//! Condition atoms are `[!]<activity|inactive>(<object-pattern>, <source-pattern>)
//! [within <dur>]` plus the context atoms `value(<name>) <op> <literal>`,
//! `location(<pattern>) =|!= <id>`, `rel(<name>, <pattern>, <pattern>)` and
//! `time_in <dur>..<dur>`; connectives are `!`, `and`, `or` (in precedence
//! order), parenthesizable. Patterns are `<id>`, `type:<id>`, `group:<id>`,
//! or `ANY`; durations are `<int>` with unit `s`, `m`, `h`, `d`, or `w`.
//! A `*` on `cur` or `when` opts the block into continuous re-evaluation.
//!
//! Scenario grammar (times must be non-decreasing; `expect` binds to the
//! nearest preceding `request`):
//!
//! ```text
//! at <time> request <subject> <op> <object> <activity>
//! at <time> env <name>=<value>
//! at <time> event <object> <activity> start|stop
//! at <time> expect permit|deny[:<reason-code>]
//! ```

mod lexer;
mod parser;
mod printer;

use std::fmt;

use thiserror::Error;

pub use parser::{parse_policy, parse_scenario};
pub use printer::{pretty_print_policy, pretty_print_scenario};

use crate::model::DurationSecs;

/// A location in a source file. Lines and columns are 1-based; the length is
/// at least 1 and never extends past the end of the line's text (the column
/// one past the last character addresses the line break).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{span}: expected {expected}, found `{found}`")]
pub struct ParseError {
    pub span: SourceSpan,
    pub expected: String,
    pub found: String,
}

/// Renders seconds in the largest single unit that divides evenly.
pub fn format_duration(secs: DurationSecs) -> String {
    if secs == 0 {
        return "0s".into();
    }
    for (unit, size) in [("w", 604_800), ("d", 86_400), ("h", 3_600), ("m", 60)] {
        if secs % size == 0 {
            return format!("{}{}", secs / size, unit);
        }
    }
    format!("{}s", secs)
}

pub(crate) fn unit_seconds(unit: char) -> Option<u64> {
    match unit {
        's' => Some(1),
        'm' => Some(60),
        'h' => Some(3_600),
        'd' => Some(86_400),
        'w' => Some(604_800),
        _ => None,
    }
}
