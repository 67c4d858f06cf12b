//! Shipped benchmark programs: bitcount, additive checksum, 2x2/4x4 matrix
//! multiply, insertion sort. Each is registered with its re-expression
//! family and a set of declared edge-case inputs.

use crate::machine::{parse_program, Program, Word};
use crate::rng::stream_rng;
use rand::Rng;
use std::sync::OnceLock;

const BITCOUNT: &str = "\
; population count of one word
.in 1
.out 1
.reexpr bitrotate
  LOADI r0, &in
  LOAD  r1, r0, 0
  LOADI r2, 0
  LOADI r3, 1
  LOADI r4, 0
loop:
  BEQ r1, r4, done
  AND r5, r1, r3
  ADD r2, r2, r5
  SHR r1, r1, r3
  JMP loop
done:
  LOADI r0, &out
  STORE r2, r0, 0
  HALT
";

const CHECKSUM: &str = "\
; additive checksum of eight words, modulo 2^32
.in 8
.out 1
.reexpr addconst
  LOADI r0, &in
  LOADI r1, 0
  LOADI r2, 0
  LOADI r3, 8
  LOADI r4, 1
loop:
  BEQ r2, r3, done
  LOAD r5, r0, 0
  ADD r1, r1, r5
  ADD r0, r0, r4
  ADD r2, r2, r4
  JMP loop
done:
  LOADI r6, &out
  STORE r1, r6, 0
  HALT
";

const SORT: &str = "\
; insertion sort: copy in -> out, sort out ascending (unsigned)
.in 8
.out 8
.reexpr valueoffset
  LOADI r0, &in
  LOADI r1, &out
  LOADI r2, 8
  LOADI r3, 0
  LOADI r4, 1
  LOADI r8, 0
copy:
  BEQ r3, r2, sort
  ADD r5, r0, r3
  LOAD r6, r5, 0
  ADD r5, r1, r3
  STORE r6, r5, 0
  ADD r3, r3, r4
  JMP copy
sort:
  LOADI r3, 1
outer:
  BEQ r3, r2, done
  ADD r5, r1, r3
  LOAD r6, r5, 0
  OR r7, r3, r3
inner:
  BEQ r7, r8, place
  SUB r9, r7, r4
  ADD r5, r1, r9
  LOAD r10, r5, 0
  BLT r6, r10, shift
  JMP place
shift:
  ADD r5, r1, r7
  STORE r10, r5, 0
  SUB r7, r7, r4
  JMP inner
place:
  ADD r5, r1, r7
  STORE r6, r5, 0
  ADD r3, r3, r4
  JMP outer
done:
  HALT
";

fn matmul_text(n: u32) -> String {
    let nn = n * n;
    format!(
        "\
; {n}x{n} matrix multiply: C = A * B, row-major, A at in[0..{nn}), B at in[{nn}..{two_nn})
.in {two_nn}
.out {nn}
.reexpr matperm{n}
  LOADI r4, {n}
  LOADI r9, 1
  LOADI r0, 0
Li:
  LOADI r1, 0
Lj:
  LOADI r2, 0
  LOADI r3, 0
Lk:
  MUL r5, r0, r4
  ADD r5, r5, r2
  LOADI r6, &in
  ADD r6, r6, r5
  LOAD r7, r6, 0
  MUL r5, r2, r4
  ADD r5, r5, r1
  LOADI r6, &in+{nn}
  ADD r6, r6, r5
  LOAD r8, r6, 0
  MUL r7, r7, r8
  ADD r3, r3, r7
  ADD r2, r2, r9
  BNE r2, r4, Lk
  MUL r5, r0, r4
  ADD r5, r5, r1
  LOADI r6, &out
  ADD r6, r6, r5
  STORE r3, r6, 0
  ADD r1, r1, r9
  BNE r1, r4, Lj
  ADD r0, r0, r9
  BNE r0, r4, Li
  HALT
",
        two_nn = 2 * nn,
    )
}

/// A registered benchmark: the parsed program plus its declared edge-case
/// input vectors.
pub struct Benchmark {
    pub program: Program,
    pub edge_inputs: Vec<Vec<Word>>,
}

pub const NAMES: [&str; 5] = ["bitcount", "checksum", "matmul2x2", "matmul4x4", "sort"];

fn registry() -> &'static Vec<Benchmark> {
    static REGISTRY: OnceLock<Vec<Benchmark>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut identity2 = vec![0u32; 8];
        identity2[0] = 1;
        identity2[3] = 1;
        identity2[4..].copy_from_slice(&[5, 6, 7, 8]);
        let mut identity4 = vec![0u32; 32];
        for i in 0..4 {
            identity4[i * 4 + i] = 1;
        }
        for (i, w) in identity4[16..].iter_mut().enumerate() {
            *w = i as u32 + 1;
        }
        vec![
            Benchmark {
                program: parse_program("bitcount", BITCOUNT).unwrap(),
                edge_inputs: vec![
                    vec![0x0000_0000],
                    vec![0xFFFF_FFFF],
                    vec![0x0000_0001],
                    vec![0x8000_0000],
                ],
            },
            Benchmark {
                program: parse_program("checksum", CHECKSUM).unwrap(),
                edge_inputs: vec![vec![0; 8], vec![0xFFFF_FFFF; 8]],
            },
            Benchmark {
                program: parse_program("matmul2x2", &matmul_text(2)).unwrap(),
                edge_inputs: vec![vec![0; 8], identity2],
            },
            Benchmark {
                program: parse_program("matmul4x4", &matmul_text(4)).unwrap(),
                edge_inputs: vec![vec![0; 32], identity4],
            },
            Benchmark {
                program: parse_program("sort", SORT).unwrap(),
                edge_inputs: vec![
                    vec![1, 2, 3, 4, 5, 6, 7, 8],
                    vec![8, 7, 6, 5, 4, 3, 2, 1],
                    vec![5; 8],
                ],
            },
        ]
    })
}

pub fn benchmark(name: &str) -> Option<&'static Benchmark> {
    registry().iter().find(|b| b.program.name == name)
}

pub fn program(name: &str) -> Option<&'static Program> {
    benchmark(name).map(|b| &b.program)
}

pub fn all() -> &'static [Benchmark] {
    registry()
}

/// Seeded random input vector for a program.
pub fn random_input(program: &Program, seed: u64, stream: u64) -> Vec<Word> {
    let mut rng = stream_rng(seed, stream);
    (0..program.inputs).map(|_| rng.gen()).collect()
}

/// Default coverage test set: 64 seeded random inputs plus the benchmark's
/// declared edge cases.
pub fn default_test_inputs(name: &str) -> Vec<Vec<Word>> {
    let b = benchmark(name).expect("registered benchmark");
    let mut inputs: Vec<Vec<Word>> = (0..64)
        .map(|i| random_input(&b.program, 0x7E57_0000 + i as u64, i))
        .collect();
    inputs.extend(b.edge_inputs.iter().cloned());
    inputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::golden_run;

    #[test]
    fn bitcount_counts_bits() {
        let p = program("bitcount").unwrap();
        assert_eq!(golden_run(p, &[0xFF]).unwrap(), vec![8]);
        assert_eq!(golden_run(p, &[0x00]).unwrap(), vec![0]);
        assert_eq!(golden_run(p, &[0xF0F0_F0F0]).unwrap(), vec![16]);
        for x in [1u32, 0xDEAD_BEEF, u32::MAX, 0x8000_0001] {
            assert_eq!(golden_run(p, &[x]).unwrap(), vec![x.count_ones()]);
        }
    }

    #[test]
    fn checksum_sums_modulo_2_to_32() {
        let p = program("checksum").unwrap();
        assert_eq!(golden_run(p, &[0; 8]).unwrap(), vec![0]);
        let input = [1u32, 2, 3, 4, 5, 6, 7, 0xFFFF_FFFF];
        let expected = input.iter().fold(0u32, |a, w| a.wrapping_add(*w));
        assert_eq!(golden_run(p, &input).unwrap(), vec![expected]);
    }

    #[test]
    fn matmul_identity_returns_the_operand() {
        let p = program("matmul2x2").unwrap();
        let input = [1, 0, 0, 1, 5, 6, 7, 8];
        assert_eq!(golden_run(p, &input).unwrap(), vec![5, 6, 7, 8]);
    }

    #[test]
    fn matmul4x4_matches_a_reference_product() {
        let p = program("matmul4x4").unwrap();
        let input = random_input(p, 42, 0);
        let (a, b) = input.split_at(16);
        let mut expected = vec![0u32; 16];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    expected[i * 4 + j] = expected[i * 4 + j]
                        .wrapping_add(a[i * 4 + k].wrapping_mul(b[k * 4 + j]));
                }
            }
        }
        assert_eq!(golden_run(p, &input).unwrap(), expected);
    }

    #[test]
    fn sort_matches_std_sort() {
        let p = program("sort").unwrap();
        for seed in 0..8u64 {
            let input = random_input(p, seed, 1);
            let mut expected = input.clone();
            expected.sort_unstable();
            assert_eq!(golden_run(p, &input).unwrap(), expected, "seed {seed}");
        }
        assert_eq!(golden_run(p, &[5; 8]).unwrap(), vec![5; 8]);
        assert_eq!(
            golden_run(p, &[8, 7, 6, 5, 4, 3, 2, 1]).unwrap(),
            vec![1, 2, 3, 4, 5, 6, 7, 8]
        );
    }

    #[test]
    fn benchmarks_keep_register_pressure_low_and_finish_quickly() {
        for b in all() {
            let used = b.program.used_registers();
            assert!(
                used.len() <= 12,
                "{} uses {} registers",
                b.program.name,
                used.len()
            );
            for input in &b.edge_inputs {
                golden_run(&b.program, input).unwrap();
            }
        }
    }
}
