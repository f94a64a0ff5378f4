//! `--config file.json` merging: keys are long flag names, and a key only
//! applies when the same flag was not given on the command line.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command, CommandFactory, FromArgMatches};
use serde_json::Value;

use crate::Cli;

pub enum ParseError {
    Clap(clap::Error),
    Config(String),
}

impl From<clap::Error> for ParseError {
    fn from(e: clap::Error) -> Self {
        ParseError::Clap(e)
    }
}

pub fn parse() -> Result<Cli, ParseError> {
    parse_from(std::env::args_os().collect())
}

pub fn parse_from(argv: Vec<OsString>) -> Result<Cli, ParseError> {
    let matches = Cli::command().try_get_matches_from(&argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let Some(path) = cli.config.clone() else {
        return Ok(cli);
    };
    let extra = config_args(&path, &matches)?;
    let mut full = argv;
    full.extend(extra);
    let matches = Cli::command().try_get_matches_from(&full)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

fn known_ids(cmd: &Command, sub: Option<&str>) -> Vec<String> {
    let mut ids: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    if let Some(sc) = sub.and_then(|s| cmd.find_subcommand(s)) {
        ids.extend(sc.get_arguments().map(|a| a.get_id().to_string()));
    }
    ids
}

fn on_command_line(m: &ArgMatches, id: &str) -> bool {
    m.ids().any(|i| i.as_str() == id) && m.value_source(id) == Some(ValueSource::CommandLine)
}

fn config_args(path: &Path, matches: &ArgMatches) -> Result<Vec<OsString>, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError::Config(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| ParseError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(ParseError::Config(format!("{}: expected a JSON object", path.display())));
    };
    let sub = matches.subcommand();
    let ids = known_ids(&Cli::command(), sub.map(|s| s.0));
    let mut out = Vec::new();
    for (key, v) in map {
        let id = key.replace('-', "_");
        if id == "config" || !ids.contains(&id) {
            return Err(ParseError::Config(format!("unknown config key `{key}`")));
        }
        let explicit = on_command_line(matches, &id) || sub.is_some_and(|(_, m)| on_command_line(m, &id));
        if explicit {
            continue;
        }
        let flag = format!("--{}", id.replace('_', "-"));
        let text = match v {
            Value::Bool(true) => {
                out.push(flag.into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            Value::Object(_) => return Err(ParseError::Config(format!("config key `{key}` must not be an object"))),
        };
        out.push(format!("{flag}={text}").into());
    }
    Ok(out)
}
