//! Line-delimited trace files: UTF-8, comma-separated, one record per line
//! with a fixed header. Times are integer seconds; fractions carry six
//! decimal places; the per-scenario slowdown map packs into one column as
//! `name:value` pairs joined by `|`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{quantize6, TraceError, VmRequest, WorkloadGroundTruth};

pub const TRACE_HEADER: &str = "vm_id,customer_id,vm_type,arrival,lifetime,cores,memory_gb,server_hint,untouched_fraction,curve_exponent,slowdown_full_pool";

const N_FIELDS: usize = 11;

fn check_opaque(kind: &str, s: &str) -> Result<(), TraceError> {
    if s.is_empty() || s.contains(|c: char| c == ',' || c == '|' || c == ':' || c.is_whitespace()) {
        return Err(TraceError::Validation(format!(
            "{kind} {s:?} must be non-empty and free of ',', '|', ':' and whitespace"
        )));
    }
    Ok(())
}

fn format_record(vm: &VmRequest) -> String {
    let hint = vm
        .server_hint
        .map(|s| s.to_string())
        .unwrap_or_default();
    let slowdowns = vm
        .ground_truth
        .slowdown_full_pool
        .iter()
        .map(|(k, v)| format!("{k}:{:.6}", quantize6(*v)))
        .collect::<Vec<_>>()
        .join("|");
    format!(
        "{},{},{},{},{},{},{},{},{:.6},{:.6},{}",
        vm.vm_id,
        vm.customer_id,
        vm.vm_type,
        vm.arrival,
        vm.lifetime,
        vm.cores,
        vm.memory_gb,
        hint,
        quantize6(vm.ground_truth.untouched_fraction),
        quantize6(vm.ground_truth.curve_exponent),
        slowdowns,
    )
}

/// Writes a canonical trace file: records sorted by arrival time (ties by
/// vm_id), fractions at six decimal places. Re-writing a file read back from
/// disk reproduces it byte for byte.
pub fn write_trace(vms: &[VmRequest], path: &Path) -> Result<(), TraceError> {
    for vm in vms {
        vm.validate()?;
        check_opaque("customer_id", &vm.customer_id)?;
        check_opaque("vm_type", &vm.vm_type)?;
        for name in vm.ground_truth.slowdown_full_pool.keys() {
            check_opaque("scenario name", name)?;
        }
    }
    let mut order: Vec<&VmRequest> = vms.iter().collect();
    order.sort_by_key(|vm| (vm.arrival, vm.vm_id));

    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_HEADER}")?;
    for vm in order {
        writeln!(w, "{}", format_record(vm))?;
    }
    w.flush()?;
    Ok(())
}

struct FieldParser<'a> {
    fields: Vec<&'a str>,
    line: usize,
}

impl<'a> FieldParser<'a> {
    fn parse<T: std::str::FromStr>(&self, idx: usize, name: &str) -> Result<T, TraceError> {
        self.fields[idx].parse().map_err(|_| TraceError::Parse {
            line: self.line,
            message: format!("field {name}: cannot parse {:?}", self.fields[idx]),
        })
    }
}

fn parse_record(line_no: usize, line: &str) -> Result<VmRequest, TraceError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != N_FIELDS {
        return Err(TraceError::Parse {
            line: line_no,
            message: format!("expected {N_FIELDS} fields, got {}", fields.len()),
        });
    }
    let p = FieldParser {
        fields,
        line: line_no,
    };
    let server_hint = if p.fields[7].is_empty() {
        None
    } else {
        Some(p.parse(7, "server_hint")?)
    };
    let mut slowdown_full_pool = BTreeMap::new();
    if !p.fields[10].is_empty() {
        for pair in p.fields[10].split('|') {
            let (name, value) = pair.split_once(':').ok_or_else(|| TraceError::Parse {
                line: line_no,
                message: format!("field slowdown_full_pool: malformed pair {pair:?}"),
            })?;
            let v: f64 = value.parse().map_err(|_| TraceError::Parse {
                line: line_no,
                message: format!("field slowdown_full_pool: cannot parse value {value:?}"),
            })?;
            slowdown_full_pool.insert(name.to_string(), v);
        }
    }
    Ok(VmRequest {
        vm_id: p.parse(0, "vm_id")?,
        customer_id: p.fields[1].to_string(),
        vm_type: p.fields[2].to_string(),
        arrival: p.parse(3, "arrival")?,
        lifetime: p.parse(4, "lifetime")?,
        cores: p.parse(5, "cores")?,
        memory_gb: p.parse(6, "memory_gb")?,
        server_hint,
        ground_truth: WorkloadGroundTruth {
            untouched_fraction: p.parse(8, "untouched_fraction")?,
            slowdown_full_pool,
            curve_exponent: p.parse(9, "curve_exponent")?,
        },
    })
}

/// Reads a trace file, validating the header, every record, and that arrivals
/// are monotone nondecreasing.
pub fn read_trace(path: &Path) -> Result<Vec<VmRequest>, TraceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut vms = Vec::new();
    let mut last_arrival = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line_no == 1 {
            if line != TRACE_HEADER {
                return Err(TraceError::Parse {
                    line: 1,
                    message: format!("bad header; expected {TRACE_HEADER:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let vm = parse_record(line_no, &line)?;
        vm.validate().map_err(|e| TraceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if vm.arrival < last_arrival {
            return Err(TraceError::Validation(format!(
                "line {line_no}: arrival {} precedes previous arrival {last_arrival}",
                vm.arrival
            )));
        }
        last_arrival = vm.arrival;
        vms.push(vm);
    }
    Ok(vms)
}
