//! Line-oriented assembly parser.
//!
//! Grammar:
//! - `.var name size [init...]`, `.in n`, `.out n`, `.reexpr family` directives
//! - one instruction per line, `;` starts a comment
//! - `label:` alone or prefixing an instruction
//! - operands: registers `r0..r15`, immediates (decimal, `0x` hex, negative
//!   decimal wraps to two's complement), variable addresses `&name` or
//!   `&name+off`, branch targets by label
//!
//! `.in n` / `.out n` implicitly declare the reserved variables `in` / `out`.

use super::{
    AssembleError, Imm, Instruction, Opcode, Program, Target, VarDecl, INPUT_VAR, OUTPUT_VAR,
};
use std::collections::BTreeMap;

pub fn parse_program(name: &str, text: &str) -> Result<Program, AssembleError> {
    let mut instructions = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut variables: Vec<VarDecl> = Vec::new();
    let mut inputs = 0u32;
    let mut outputs = 0u32;
    let mut reexpression = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut src = raw;
        if let Some(pos) = src.find(';') {
            src = &src[..pos];
        }
        let mut src = src.trim();
        if src.is_empty() {
            continue;
        }

        if let Some(rest) = src.strip_prefix('.') {
            parse_directive(
                rest,
                line,
                &mut variables,
                &mut inputs,
                &mut outputs,
                &mut reexpression,
            )?;
            continue;
        }

        // Leading label(s).
        while let Some(colon) = src.find(':') {
            let (label, rest) = src.split_at(colon);
            let label = label.trim();
            if !is_ident(label) {
                return Err(err(line, format!("invalid label `{label}`")));
            }
            if labels.insert(label.to_string(), instructions.len()).is_some() {
                return Err(err(line, format!("duplicate label `{label}`")));
            }
            src = rest[1..].trim();
            if src.is_empty() {
                break;
            }
        }
        if src.is_empty() {
            continue;
        }

        instructions.push(parse_instruction(src, line)?);
    }

    let program = Program {
        name: name.to_string(),
        instructions,
        labels,
        variables,
        inputs,
        outputs,
        reexpression,
    };
    program.validate()?;
    Ok(program)
}

fn parse_directive(
    rest: &str,
    line: usize,
    variables: &mut Vec<VarDecl>,
    inputs: &mut u32,
    outputs: &mut u32,
    reexpression: &mut Option<String>,
) -> Result<(), AssembleError> {
    let mut parts = rest.split_whitespace();
    let kind = parts.next().unwrap_or("");
    match kind {
        "var" => {
            let name = parts
                .next()
                .ok_or_else(|| err(line, ".var needs a name".into()))?;
            if !is_ident(name) {
                return Err(err(line, format!("invalid variable name `{name}`")));
            }
            if name == INPUT_VAR || name == OUTPUT_VAR {
                return Err(err(line, format!("`{name}` is reserved for .in/.out")));
            }
            let size = parse_word(
                parts
                    .next()
                    .ok_or_else(|| err(line, ".var needs a size".into()))?,
            )
            .ok_or_else(|| err(line, "invalid .var size".into()))?;
            let init = parts
                .by_ref()
                .map(|t| parse_word(t).ok_or_else(|| err(line, format!("bad initializer `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            variables.push(VarDecl {
                name: name.to_string(),
                size,
                init,
            });
        }
        "in" => {
            let n = parse_word(parts.next().unwrap_or(""))
                .ok_or_else(|| err(line, "invalid .in count".into()))?;
            *inputs = n;
            variables.push(VarDecl {
                name: INPUT_VAR.into(),
                size: n,
                init: vec![],
            });
        }
        "out" => {
            let n = parse_word(parts.next().unwrap_or(""))
                .ok_or_else(|| err(line, "invalid .out count".into()))?;
            *outputs = n;
            variables.push(VarDecl {
                name: OUTPUT_VAR.into(),
                size: n,
                init: vec![],
            });
        }
        "reexpr" => {
            let family = parts
                .next()
                .ok_or_else(|| err(line, ".reexpr needs a family".into()))?;
            *reexpression = Some(family.to_string());
        }
        other => return Err(err(line, format!("unknown directive `.{other}`"))),
    }
    if parts.next().is_some() && kind != "var" {
        return Err(err(line, format!("trailing tokens after .{kind}")));
    }
    Ok(())
}

fn parse_instruction(src: &str, line: usize) -> Result<Instruction, AssembleError> {
    let (mnemonic, rest) = match src.find(char::is_whitespace) {
        Some(p) => (&src[..p], src[p..].trim()),
        None => (src, ""),
    };
    let ops: Vec<&str> = if rest.is_empty() {
        vec![]
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let op = Opcode::ALL
        .iter()
        .copied()
        .find(|o| o.mnemonic().eq_ignore_ascii_case(mnemonic))
        .ok_or_else(|| err(line, format!("unknown mnemonic `{mnemonic}`")))?;

    let want = |n: usize| -> Result<(), AssembleError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(err(
                line,
                format!("{} takes {n} operands, got {}", op.mnemonic(), ops.len()),
            ))
        }
    };

    Ok(match op {
        Opcode::Loadi => {
            want(2)?;
            Instruction::Loadi {
                rd: parse_reg(ops[0], line)?,
                imm: parse_imm(ops[1], line)?,
            }
        }
        Opcode::Load => {
            want(3)?;
            Instruction::Load {
                rd: parse_reg(ops[0], line)?,
                base: parse_reg(ops[1], line)?,
                offset: parse_imm(ops[2], line)?,
            }
        }
        Opcode::Store => {
            want(3)?;
            Instruction::Store {
                rs: parse_reg(ops[0], line)?,
                base: parse_reg(ops[1], line)?,
                offset: parse_imm(ops[2], line)?,
            }
        }
        o if o.is_alu() => {
            want(3)?;
            Instruction::Alu {
                op: o,
                rd: parse_reg(ops[0], line)?,
                ra: parse_reg(ops[1], line)?,
                rb: parse_reg(ops[2], line)?,
            }
        }
        o if o.is_branch() => {
            want(3)?;
            Instruction::Branch {
                op: o,
                ra: parse_reg(ops[0], line)?,
                rb: parse_reg(ops[1], line)?,
                target: parse_target(ops[2], line)?,
            }
        }
        Opcode::Jmp => {
            want(1)?;
            Instruction::Jmp {
                target: parse_target(ops[0], line)?,
            }
        }
        Opcode::Halt => {
            want(0)?;
            Instruction::Halt
        }
        _ => unreachable!(),
    })
}

fn parse_reg(token: &str, line: usize) -> Result<u8, AssembleError> {
    let body = token
        .strip_prefix('r')
        .or_else(|| token.strip_prefix('R'))
        .ok_or_else(|| err(line, format!("expected register, got `{token}`")))?;
    let idx: u8 = body
        .parse()
        .map_err(|_| err(line, format!("bad register `{token}`")))?;
    if idx >= super::NUM_REGS {
        return Err(err(line, format!("register `{token}` out of range")));
    }
    Ok(idx)
}

fn parse_imm(token: &str, line: usize) -> Result<Imm, AssembleError> {
    if let Some(var) = token.strip_prefix('&') {
        let (name, offset) = match var.split_once('+') {
            Some((n, off)) => (
                n.trim(),
                parse_word(off.trim())
                    .ok_or_else(|| err(line, format!("bad offset in `{token}`")))?,
            ),
            None => (var.trim(), 0),
        };
        if !is_ident(name) {
            return Err(err(line, format!("bad variable reference `{token}`")));
        }
        return Ok(Imm::VarAddr {
            name: name.to_string(),
            offset,
        });
    }
    parse_word(token)
        .map(Imm::Value)
        .ok_or_else(|| err(line, format!("bad immediate `{token}`")))
}

fn parse_target(token: &str, line: usize) -> Result<Target, AssembleError> {
    if is_ident(token) {
        Ok(Target::Label(token.to_string()))
    } else {
        Err(err(line, format!("bad branch target `{token}`")))
    }
}

fn parse_word(token: &str) -> Option<u32> {
    if let Some(hex) = token.strip_prefix("0x").or_else(|| token.strip_prefix("0X")) {
        u32::from_str_radix(hex, 16).ok()
    } else if let Some(neg) = token.strip_prefix('-') {
        neg.parse::<u32>().ok().map(|v| (v as i64).wrapping_neg() as u32)
    } else {
        token.parse().ok()
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn err(line: usize, msg: String) -> AssembleError {
    AssembleError::Parse { line, msg }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
; trivial program
.in 1
.out 1
.var scratch 2 0xdead 7
start:
  LOADI r0, &in
  LOAD  r1, r0, 0
  LOADI r2, &out
  STORE r1, r2, 0
  HALT
";

    #[test]
    fn parses_directives_and_instructions() {
        let p = parse_program("sample", SAMPLE).unwrap();
        assert_eq!(p.inputs, 1);
        assert_eq!(p.outputs, 1);
        assert_eq!(p.instructions.len(), 5);
        assert_eq!(p.labels["start"], 0);
        let scratch = p.variable("scratch").unwrap();
        assert_eq!(scratch.init, vec![0xdead, 7]);
        assert_eq!(p.variable("in").unwrap().size, 1);
    }

    #[test]
    fn negative_immediates_wrap() {
        let p = parse_program("neg", ".out 1\nLOADI r0, -1\nHALT").unwrap();
        match &p.instructions[0] {
            Instruction::Loadi { imm: Imm::Value(v), .. } => assert_eq!(*v, u32::MAX),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_label() {
        let e = parse_program("bad", ".out 1\nJMP nowhere\nHALT").unwrap_err();
        assert!(matches!(e, AssembleError::InvalidProgram(_)));
    }

    #[test]
    fn rejects_reserved_var_names() {
        let e = parse_program("bad", ".var in 1\n.out 1\nHALT").unwrap_err();
        assert!(matches!(e, AssembleError::Parse { .. }));
    }

    #[test]
    fn rejects_out_of_range_register() {
        let e = parse_program("bad", ".out 1\nLOADI r16, 0\nHALT").unwrap_err();
        assert!(matches!(e, AssembleError::Parse { .. }));
    }
}
