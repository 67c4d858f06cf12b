//! The simulated remote variant-generation server: given a located fault and
//! the program, search diversity configurations for a variant whose masking
//! coverage over a test input set meets the threshold.
//!
//! Candidates are evaluated in a deterministic fault-class-guided order
//! (register fault → register exclusion; memory cell → layout moves; address
//! decoder → gap/base placements matching the stuck polarity; instruction
//! decoder → opcode re-encodings avoiding the faulty byte), followed by a
//! seeded random tail up to the search budget. Coverage estimation runs are
//! independent per test input and run data-parallel.

use crate::diversity::{random_config, DiversityConfig, DynamicParams, StaticParams};
use crate::exec;
use crate::faults::{DecoderMode, DetectedFault, Fault, FaultDefinition, FaultKind, FaultPlan, Persistence};
use crate::machine::{
    assemble, golden_run, parse_program, AssembleError, ExecStatus, Program, Word,
    DEFAULT_CYCLE_LIMIT, DEFAULT_DATA_BASE, DEFAULT_MEMORY_SIZE,
};
use crate::rng::mix;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

pub const DEFAULT_SEARCH_BUDGET: u32 = 64;

/// The program a variant request refers to: a registered benchmark by name,
/// or inline assembly text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramRef {
    Name(String),
    Text { name: String, source: String },
}

impl ProgramRef {
    pub fn resolve(&self) -> Result<Program, AssembleError> {
        match self {
            ProgramRef::Name(name) => crate::programs::program(name)
                .cloned()
                .ok_or_else(|| AssembleError::InvalidProgram(format!("unknown program `{name}`"))),
            ProgramRef::Text { name, source } => parse_program(name, source),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRequest {
    pub program: ProgramRef,
    pub fault: FaultDefinition,
    pub coverage_threshold: f64,
    /// Input vectors, carried as hex word lists on the wire.
    #[serde(with = "hex_words")]
    pub test_inputs: Vec<Vec<Word>>,
    #[serde(default = "default_budget")]
    pub search_budget: u32,
}

fn default_budget() -> u32 {
    DEFAULT_SEARCH_BUDGET
}

/// Words rendered as `0x%08x` strings; numbers are also accepted on input.
pub mod hex_words {
    use super::Word;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum WordRepr {
        Num(u32),
        Hex(String),
    }

    pub fn serialize<S: Serializer>(v: &[Vec<Word>], s: S) -> Result<S::Ok, S::Error> {
        let hex: Vec<Vec<String>> = v
            .iter()
            .map(|ws| ws.iter().map(|w| format!("{w:#010x}")).collect())
            .collect();
        hex.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Word>>, D::Error> {
        let raw: Vec<Vec<WordRepr>> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|ws| {
                ws.into_iter()
                    .map(|w| match w {
                        WordRepr::Num(n) => Ok(n),
                        WordRepr::Hex(h) => {
                            let t = h.trim_start_matches("0x").trim_start_matches("0X");
                            u32::from_str_radix(t, 16).map_err(serde::de::Error::custom)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum VariantResponse {
    Generated {
        config: DiversityConfig,
        coverage: f64,
        configs_tried: u32,
    },
    Failed {
        best_coverage: f64,
        configs_tried: u32,
    },
}

/// Concrete injectable fault for coverage evaluation. Decoder substitutions
/// with an unidentified target are evaluated against a fixed representative
/// target byte; the guided countermeasure avoids the from-byte entirely, so
/// the choice does not affect which variants pass.
fn concrete_kind(fault: &DetectedFault) -> FaultKind {
    match *fault {
        DetectedFault::RegisterStuckBit { reg, bit, stuck_value } => {
            FaultKind::RegisterStuckBit { reg, bit, stuck_value }
        }
        DetectedFault::MemoryStuckBit { addr, bit, stuck_value } => {
            FaultKind::MemoryStuckBit { addr, bit, stuck_value }
        }
        DetectedFault::AddressDecoderLine { line, mode } => {
            FaultKind::AddressDecoderLine { line, mode }
        }
        DetectedFault::InstructionDecoderSub { from, to } => FaultKind::InstructionDecoderSub {
            from,
            to: to.unwrap_or(from ^ 0x80),
        },
    }
}

/// Fraction of test inputs for which the variant's canonical output equals
/// the golden output while the fault stands from cycle 0.
pub fn estimate_masking_coverage(
    program: &Program,
    config: &DiversityConfig,
    fault: &DetectedFault,
    test_inputs: &[Vec<Word>],
) -> Result<f64, AssembleError> {
    coverage_impl(program, config, fault, test_inputs, false)
}

/// Sequential counterpart of [`estimate_masking_coverage`].
pub fn estimate_masking_coverage_sequential(
    program: &Program,
    config: &DiversityConfig,
    fault: &DetectedFault,
    test_inputs: &[Vec<Word>],
) -> Result<f64, AssembleError> {
    coverage_impl(program, config, fault, test_inputs, true)
}

fn coverage_impl(
    program: &Program,
    config: &DiversityConfig,
    fault: &DetectedFault,
    test_inputs: &[Vec<Word>],
    sequential: bool,
) -> Result<f64, AssembleError> {
    assert!(!test_inputs.is_empty(), "coverage needs at least one test input");
    let image = assemble(program, config)?;
    let plan = FaultPlan::single(Fault {
        kind: concrete_kind(fault),
        persistence: Persistence::Permanent { onset_cycle: 0 },
        core: 0,
    });
    let masked_one = |i: usize| -> u32 {
        let input = &test_inputs[i];
        let golden = match golden_run(program, input) {
            Ok(g) => g,
            Err(_) => return 0,
        };
        let re_input = match crate::diversity::reexpress_for(program, config, input) {
            Ok(v) => v,
            Err(_) => return 0,
        };
        let outcome = crate::machine::run(&image, &re_input, &plan, DEFAULT_CYCLE_LIMIT);
        if outcome.status != ExecStatus::Completed {
            return 0;
        }
        let raw = outcome.outputs.expect("completed");
        match crate::diversity::invert_for(program, config, &raw, input.len()) {
            Ok(canonical) if canonical == golden => 1,
            _ => 0,
        }
    };
    let masked: u32 = if sequential {
        exec::map_indexed_sequential(test_inputs.len(), masked_one).into_iter().sum()
    } else {
        exec::map_indexed(test_inputs.len(), masked_one).into_iter().sum()
    };
    Ok(masked as f64 / test_inputs.len() as f64)
}

/// Guided candidate configs for a fault class, most promising first.
fn guided_candidates(program: &Program, fault: &DetectedFault) -> Vec<DiversityConfig> {
    match *fault {
        DetectedFault::RegisterStuckBit { reg, .. } => {
            let exclusion = DiversityConfig {
                static_params: StaticParams {
                    excluded_registers: [reg].into_iter().collect(),
                    ..Default::default()
                },
                ..Default::default()
            };
            // Data re-expression is the secondary mapped technique.
            let keyed = |k: Word| DiversityConfig {
                dynamic: DynamicParams { reexpr_key: Some(k), ..Default::default() },
                ..Default::default()
            };
            vec![exclusion, keyed(0x9E37_79B9), keyed(0x517C_C1B7)]
        }
        DetectedFault::MemoryStuckBit { addr, .. } => layout_moves_avoiding(program, addr),
        DetectedFault::AddressDecoderLine { line, mode } => match mode {
            DecoderMode::Stuck0 => line_placements(program, line, 0),
            DecoderMode::Stuck1 => line_placements(program, line, 1),
            // A flip remaps every data access bijectively; no placement can
            // realign the physically agreed output cells. Leave it to the
            // random tail (and honest failure).
            DecoderMode::Flip => vec![],
        },
        DetectedFault::InstructionDecoderSub { from, .. } => encodings_avoiding(from),
    }
}

/// Base/gap moves that take the whole data block off the faulty cell.
fn layout_moves_avoiding(program: &Program, addr: u32) -> Vec<DiversityConfig> {
    let span = program.data_words();
    let db = DEFAULT_DATA_BASE;
    let mut offsets = Vec::new();
    // Start the block just past the cell, or end it just before.
    if addr + 1 >= db {
        offsets.push(addr + 1 - db);
    }
    if addr > db + span {
        offsets.push(addr - span - db);
    }
    offsets.push(span + 8);
    let mut out: Vec<DiversityConfig> = offsets
        .into_iter()
        .map(|base_offset| DiversityConfig {
            dynamic: DynamicParams { base_offset, ..Default::default() },
            ..Default::default()
        })
        .collect();
    // Gap moves shift cells as well; useful when the cell sits mid-block.
    for gap_size in [1u32, 2, 4] {
        out.push(DiversityConfig {
            dynamic: DynamicParams { gap_size, ..Default::default() },
            ..Default::default()
        });
    }
    out
}

/// Placements whose data cells all carry `polarity` on address line `line`,
/// so a stuck line of that polarity never fires. For lines narrower than the
/// block, per-variable strides (gap 2^(line+1) - 1 with an aligned base) make
/// single-word variables agree on the bit.
fn line_placements(program: &Program, line: u8, polarity: u32) -> Vec<DiversityConfig> {
    let span = program.data_words();
    let db = DEFAULT_DATA_BASE;
    let mask = 1u32 << line;
    let period = mask << 1;
    let mut out = Vec::new();

    // Aligned contiguous block: fits when the block does not cross the
    // line's period boundary.
    if span <= mask || line >= 15 {
        let mut base = polarity * mask;
        while base < DEFAULT_MEMORY_SIZE {
            if base >= db && span <= mask.max(span) {
                let end = base + span;
                let window_end = (base & !(period - 1)) + polarity * mask + mask;
                if end <= window_end && end <= DEFAULT_MEMORY_SIZE {
                    out.push(DiversityConfig {
                        dynamic: DynamicParams { base_offset: base - db, ..Default::default() },
                        ..Default::default()
                    });
                    if out.len() >= 3 {
                        break;
                    }
                }
            }
            base += period;
            if period == 0 {
                break;
            }
        }
    }

    // Stride placement for small lines: one-word variables land on
    // like-polarity addresses every 2^(line+1) words.
    if program.variables.iter().all(|v| v.size == 1) && line <= 3 {
        let gap = period - 1;
        // First variable lands at data_base + offset + gap; align it.
        for align_try in 0..2u32 {
            let first = db + gap + align_try * mask;
            let aligned = (first & !(period - 1)) + polarity * mask;
            let offset = aligned.wrapping_sub(db + gap) & (period - 1);
            out.push(DiversityConfig {
                dynamic: DynamicParams {
                    gap_size: gap,
                    base_offset: offset + align_try,
                    ..Default::default()
                },
                ..Default::default()
            });
        }
        // Brute-force small offsets with the stride gap; cheap and exact.
        for off in 0..period.min(16) {
            out.push(DiversityConfig {
                dynamic: DynamicParams { gap_size: gap, base_offset: off, ..Default::default() },
                ..Default::default()
            });
        }
    }
    out
}

/// Opcode encodings in which no logical opcode maps to the faulty byte.
fn encodings_avoiding(from: u8) -> Vec<DiversityConfig> {
    let mut out = Vec::new();
    let mut seed = 0x5EED_0000u64 + from as u64;
    while out.len() < 4 {
        seed = mix(seed, 0xE2C);
        let enc = crate::machine::OpcodeEncoding::from_seed(seed);
        if !enc.uses_byte(from) {
            out.push(DiversityConfig {
                static_params: StaticParams {
                    opcode_encoding_seed: Some(seed),
                    ..Default::default()
                },
                ..Default::default()
            });
        }
    }
    out
}

/// Search candidate configs in deterministic guided order, then a seeded
/// random tail, up to the budget. The first config meeting the threshold
/// wins; otherwise the best coverage seen is reported.
pub fn generate_variant(request: &VariantRequest) -> VariantResponse {
    let program = match request.program.resolve() {
        Ok(p) => p,
        Err(_) => return VariantResponse::Failed { best_coverage: 0.0, configs_tried: 0 },
    };
    let mut tried = 0u32;
    let mut best = 0.0f64;
    let tail_seed = mix(0xC0DE_BA5E, request.search_budget as u64);
    let mut all: Vec<DiversityConfig> = guided_candidates(&program, &request.fault.kind);
    let mut i = 0u64;
    while (all.len() as u32) < request.search_budget {
        all.push(random_config(&program, mix(tail_seed, i)));
        i += 1;
    }

    for config in all.into_iter().take(request.search_budget as usize) {
        tried += 1;
        match estimate_masking_coverage(&program, &config, &request.fault.kind, &request.test_inputs)
        {
            Ok(coverage) => {
                if coverage >= request.coverage_threshold {
                    return VariantResponse::Generated { config, coverage, configs_tried: tried };
                }
                if coverage > best {
                    best = coverage;
                }
            }
            // Infeasible configs count as coverage 0.
            Err(_) => {}
        }
    }
    VariantResponse::Failed { best_coverage: best, configs_tried: tried }
}

// ---------------------------------------------------------------------------
// Wire mode: length-prefixed JSON records over a local socket
// ---------------------------------------------------------------------------

/// Wire envelope: a response or a request-level error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum ServeReply {
    Response(VariantResponse),
    Error { message: String },
}

pub fn write_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> std::io::Result<()> {
    let body = serde_json::to_vec(msg)?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

pub fn read_message<R: Read, T: serde::de::DeserializeOwned>(r: &mut R) -> std::io::Result<T> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map_err(std::io::Error::from)
}

/// Serve variant requests over a socket: one length-prefixed JSON record per
/// message, one reply per request, connections handled sequentially. With
/// `max_requests` the server returns after that many requests.
pub fn serve(listener: TcpListener, max_requests: Option<usize>) -> std::io::Result<()> {
    let mut served = 0usize;
    for stream in listener.incoming() {
        let mut stream = stream?;
        loop {
            let request: Result<VariantRequest, _> = read_message(&mut stream);
            match request {
                Ok(req) => {
                    let reply = ServeReply::Response(generate_variant(&req));
                    write_message(&mut stream, &reply)?;
                    served += 1;
                    if let Some(max) = max_requests {
                        if served >= max {
                            return Ok(());
                        }
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => {
                    let _ = write_message(
                        &mut stream,
                        &ServeReply::Error { message: e.to_string() },
                    );
                    break;
                }
            }
        }
    }
    Ok(())
}

/// Client helper: send one request to a serving socket and await the reply.
pub fn request_over_socket<A: ToSocketAddrs>(
    addr: A,
    request: &VariantRequest,
) -> std::io::Result<VariantResponse> {
    let mut stream = TcpStream::connect(addr)?;
    write_message(&mut stream, request)?;
    match read_message::<_, ServeReply>(&mut stream)? {
        ServeReply::Response(r) => Ok(r),
        ServeReply::Error { message } => {
            Err(std::io::Error::new(std::io::ErrorKind::InvalidData, message))
        }
    }
}
