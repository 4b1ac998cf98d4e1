//! Effective seven-level scheme of the ⁸⁷Rb D1 clock transition.
//!
//! Levels, field modes, model parameters and the rotating-frame Hamiltonian.
//! All rates and detunings are angular frequencies (rad/s).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wigner::d1_strength;

pub const NUM_LEVELS: usize = 7;

/// 7×7 complex matrix over the effective levels.
pub type LevelMatrix = SMatrix<Complex64, NUM_LEVELS, NUM_LEVELS>;

/// Physical constants and literature defaults.
pub mod constants {
    use std::f64::consts::TAU;

    /// Natural linewidth of the D1 line.
    pub const GAMMA_NATURAL: f64 = TAU * 5.75e6;
    /// N₂ pressure broadening of the Rb D1 line (FWHM), Hz per Torr.
    pub const N2_BROADENING_HZ_PER_TORR: f64 = 15.7e6;
    /// Buffer-gas pressure in the cell.
    pub const BUFFER_PRESSURE_TORR: f64 = 10.0;
    /// Ground-state hyperfine splitting of ⁸⁷Rb, Hz.
    pub const GROUND_HFS_HZ: f64 = 6.834_682_610_904e9;
    /// 5P1/2 hyperfine splitting F'=1 ↔ F'=2 of ⁸⁷Rb.
    pub const EXCITED_HFS: f64 = TAU * 817e6;
    /// Effective off-resonant π detuning found by fitting the repump sweeps.
    pub const OFF_RES_DETUNING: f64 = TAU * 70e6;
    /// Rubidium density in the cell, atoms per m³ (7×10¹⁰ cm⁻³).
    pub const CELL_DENSITY: f64 = 7e16;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("field couplings form a cycle through {0}; no time-independent rotating frame exists")]
    CyclicCoupling(Level),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("branching table: {0}")]
    Branching(String),
}

/// The seven effective states, in matrix order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    /// |1⟩, F=1 m=0
    Clock1,
    /// |2⟩, F=2 m=0
    Clock2,
    /// |3⟩, F'=2 m=1
    CptExcited,
    /// |4⟩, all ground m≠0 sublevels
    Trap,
    /// |5⟩, all excited m≠0 sublevels
    PiExcited,
    /// |6⟩, F'=1 m=0
    OffRes1,
    /// |7⟩, F'=2 m=0
    OffRes2,
}

impl Level {
    pub const ALL: [Level; NUM_LEVELS] = [
        Level::Clock1,
        Level::Clock2,
        Level::CptExcited,
        Level::Trap,
        Level::PiExcited,
        Level::OffRes1,
        Level::OffRes2,
    ];
    pub const GROUND: [Level; 3] = [Level::Clock1, Level::Clock2, Level::Trap];
    pub const EXCITED: [Level; 4] = [
        Level::CptExcited,
        Level::PiExcited,
        Level::OffRes1,
        Level::OffRes2,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn is_ground(self) -> bool {
        Self::GROUND.contains(&self)
    }

    pub fn is_excited(self) -> bool {
        Self::EXCITED.contains(&self)
    }

    /// Column of this level in ground-indexed tables.
    pub fn ground_slot(self) -> Option<usize> {
        Self::GROUND.iter().position(|&l| l == self)
    }

    /// Row of this level in excited-indexed tables.
    pub fn excited_slot(self) -> Option<usize> {
        Self::EXCITED.iter().position(|&l| l == self)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Level {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| ModelError::Branching(format!("unknown level `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeId {
    /// σ⁺ sideband on F=2 → F'=2.
    SigmaA,
    /// σ⁺ sideband on F=1 → F'=2.
    SigmaB,
    /// π repump sideband on F=2 → F'=2.
    PiA,
    /// π repump sideband on F=1 → F'=1.
    PiB,
}

impl ModeId {
    pub const ALL: [ModeId; 4] = [ModeId::SigmaA, ModeId::SigmaB, ModeId::PiA, ModeId::PiB];

    pub fn is_sigma(self) -> bool {
        matches!(self, ModeId::SigmaA | ModeId::SigmaB)
    }

    /// Resonantly driven transition (ground, excited).
    pub fn resonant(self) -> (Level, Level) {
        match self {
            ModeId::SigmaA => (Level::Clock2, Level::CptExcited),
            ModeId::SigmaB => (Level::Clock1, Level::CptExcited),
            ModeId::PiA | ModeId::PiB => (Level::Trap, Level::PiExcited),
        }
    }

    /// Off-resonantly driven m=0 → m=0 transition of the π modes.
    pub fn off_resonant(self) -> Option<(Level, Level)> {
        match self {
            ModeId::PiA => Some((Level::Clock2, Level::OffRes1)),
            ModeId::PiB => Some((Level::Clock1, Level::OffRes2)),
            _ => None,
        }
    }
}

/// One optical mode: Rabi frequency and one-photon detuning on its resonant transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMode {
    pub id: ModeId,
    pub rabi: f64,
    pub detuning: f64,
}

impl FieldMode {
    pub fn new(id: ModeId, rabi: f64) -> Self {
        Self { id, rabi, detuning: 0.0 }
    }

    pub fn is_inert(&self) -> bool {
        self.rabi == 0.0
    }
}

/// Excited → ground decay probabilities, rows in [`Level::EXCITED`] order and
/// columns in [`Level::GROUND`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchingTable(pub [[f64; 3]; 4]);

impl BranchingTable {
    pub fn get(&self, excited: Level, ground: Level) -> f64 {
        match (excited.excited_slot(), ground.ground_slot()) {
            (Some(e), Some(g)) => self.0[e][g],
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (e, row) in self.0.iter().enumerate() {
            if row.iter().any(|&b| !(0.0..=1.0).contains(&b)) {
                return Err(ModelError::Branching(format!(
                    "row {} has entries outside [0, 1]",
                    Level::EXCITED[e]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ModelError::Branching(format!(
                    "row {} sums to {sum}",
                    Level::EXCITED[e]
                )));
            }
        }
        if self.get(Level::OffRes1, Level::Clock1) != 0.0
            || self.get(Level::OffRes2, Level::Clock2) != 0.0
        {
            return Err(ModelError::Branching(
                "forbidden m=0 → m=0 decay channels must be zero".into(),
            ));
        }
        Ok(())
    }

    /// Parse the plain-text table format: `#` comments, a header line naming
    /// the ground columns, then one row per excited level.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| ModelError::Branching("missing header".into()))?;
        let columns = header
            .split_whitespace()
            .skip(1)
            .map(Level::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        if columns.len() != 3 || columns.iter().any(|l| !l.is_ground()) {
            return Err(ModelError::Branching(
                "header must name the three ground levels".into(),
            ));
        }
        let mut table = [[f64::NAN; 3]; 4];
        for line in lines {
            let mut fields = line.split_whitespace();
            let excited: Level = fields.next().unwrap_or_default().parse()?;
            let row = excited
                .excited_slot()
                .ok_or_else(|| ModelError::Branching(format!("{excited} is not excited")))?;
            let values = fields
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| ModelError::Branching(format!("bad value `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != 3 {
                return Err(ModelError::Branching(format!(
                    "row {excited} needs 3 values"
                )));
            }
            for (col, v) in columns.iter().zip(values) {
                table[row][col.ground_slot().unwrap()] = v;
            }
        }
        if table.iter().flatten().any(|v| v.is_nan()) {
            return Err(ModelError::Branching("missing excited rows".into()));
        }
        // fixtures carry 7 significant digits; restore exact row sums
        for row in table.iter_mut() {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|b| *b /= sum);
        }
        let table = BranchingTable(table);
        table.validate()?;
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("excited\\ground Clock1 Clock2 Trap\n");
        for (e, row) in self.0.iter().enumerate() {
            out.push_str(&Level::EXCITED[e].to_string());
            for v in row {
                out.push_str(&format!(" {:.7}", v));
            }
            out.push('\n');
        }
        out
    }
}

// Sublevels (F, m) lumped into each effective state.
const CLOCK1_SUB: &[(i32, i32)] = &[(1, 0)];
const CLOCK2_SUB: &[(i32, i32)] = &[(2, 0)];
const TRAP_SUB: &[(i32, i32)] = &[(1, -1), (1, 1), (2, -2), (2, -1), (2, 1), (2, 2)];
const CPT_EXC_SUB: &[(i32, i32)] = &[(2, 1)];
const PI_EXC_SUB: &[(i32, i32)] = &[(1, -1), (1, 1), (2, -2), (2, -1), (2, 1), (2, 2)];
const OFF1_SUB: &[(i32, i32)] = &[(1, 0)];
const OFF2_SUB: &[(i32, i32)] = &[(2, 0)];

fn sublevels(level: Level) -> &'static [(i32, i32)] {
    match level {
        Level::Clock1 => CLOCK1_SUB,
        Level::Clock2 => CLOCK2_SUB,
        Level::Trap => TRAP_SUB,
        Level::CptExcited => CPT_EXC_SUB,
        Level::PiExcited => PI_EXC_SUB,
        Level::OffRes1 => OFF1_SUB,
        Level::OffRes2 => OFF2_SUB,
    }
}

/// Effective branching ratios from the 16-level D1 decay strengths, summed
/// over the sublevels each effective state lumps together.
pub fn default_branching_table() -> BranchingTable {
    let mut table = [[0.0; 3]; 4];
    for (e, &exc) in Level::EXCITED.iter().enumerate() {
        for (g, &gnd) in Level::GROUND.iter().enumerate() {
            table[e][g] = sublevels(exc)
                .iter()
                .flat_map(|&(fe, me)| {
                    sublevels(gnd)
                        .iter()
                        .map(move |&(fg, mg)| d1_strength(fe, me, fg, mg))
                })
                .sum();
        }
        let sum: f64 = table[e].iter().sum();
        table[e].iter_mut().for_each(|b| *b /= sum);
    }
    BranchingTable(table)
}

/// Effective dipole factors of the π couplings, relative to the σ⁺ clock
/// transitions (which define the unit).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipoleFactors {
    /// PiA on Trap → PiExcited.
    pub pi_a_trap: f64,
    /// PiB on Trap → PiExcited.
    pub pi_b_trap: f64,
    /// PiA on Clock2 → OffRes1.
    pub pi_a_off: f64,
    /// PiB on Clock1 → OffRes2.
    pub pi_b_off: f64,
}

impl DipoleFactors {
    pub const UNIT: DipoleFactors = DipoleFactors {
        pi_a_trap: 1.0,
        pi_b_trap: 1.0,
        pi_a_off: 1.0,
        pi_b_off: 1.0,
    };
}

/// Dipole factors from the D1 line strengths.
///
/// The Trap factors average the squared π strength of the sublevels each
/// repump sideband addresses over all six Trap sublevels; the off-resonant
/// factors use the single m=0 → m=0 line. Everything is referenced to the
/// F=1,2 m=0 → F'=2 m=1 σ⁺ strength.
pub fn default_dipole_factors() -> DipoleFactors {
    let sigma_ref = d1_strength(2, 1, 2, 0);
    let trap_avg = |f_gnd: i32, f_exc: i32| {
        TRAP_SUB
            .iter()
            .filter(|&&(f, _)| f == f_gnd)
            .map(|&(f, m)| d1_strength(f_exc, m, f, m))
            .sum::<f64>()
            / TRAP_SUB.len() as f64
    };
    DipoleFactors {
        pi_a_trap: (trap_avg(2, 2) / sigma_ref).sqrt(),
        pi_b_trap: (trap_avg(1, 1) / sigma_ref).sqrt(),
        pi_a_off: (d1_strength(1, 0, 2, 0) / sigma_ref).sqrt(),
        pi_b_off: (d1_strength(2, 0, 1, 0) / sigma_ref).sqrt(),
    }
}

/// Ground equilibrium weights over (Clock1, Clock2, Trap): 8 sublevels, 6 lumped into Trap.
pub const THERMAL_WEIGHTS: [f64; 3] = [1.0 / 8.0, 1.0 / 8.0, 6.0 / 8.0];

/// Excited linewidth Γ' = Γ_nat + pressure broadening.
pub fn pressure_broadened_linewidth(pressure_torr: f64, hz_per_torr: f64) -> f64 {
    constants::GAMMA_NATURAL + 2.0 * PI * hz_per_torr * pressure_torr
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub modes: [FieldMode; 4],
    /// Two-photon (Raman) detuning of the σ⁺ pair.
    pub delta: f64,
    /// Total excited-state decay rate Γ'.
    pub gamma_exc: f64,
    pub branching: BranchingTable,
    pub dipole: DipoleFactors,
    /// Ground population relaxation γ₁.
    pub gamma_pop: f64,
    /// Extra clock-coherence dephasing γ₂.
    pub gamma_coh: f64,
    pub thermal_weights: [f64; 3],
    /// Atoms per m³.
    pub density: f64,
    /// Effective detuning of the off-resonant π transitions.
    pub off_res_detuning: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            modes: ModeId::ALL.map(|id| FieldMode::new(id, 0.0)),
            delta: 0.0,
            gamma_exc: pressure_broadened_linewidth(
                constants::BUFFER_PRESSURE_TORR,
                constants::N2_BROADENING_HZ_PER_TORR,
            ),
            branching: default_branching_table(),
            dipole: default_dipole_factors(),
            gamma_pop: 2.0 * PI * 200.0,
            gamma_coh: 2.0 * PI * 1600.0,
            thermal_weights: THERMAL_WEIGHTS,
            density: constants::CELL_DENSITY,
            off_res_detuning: constants::OFF_RES_DETUNING,
        }
    }
}

impl ModelParams {
    pub fn mode(&self, id: ModeId) -> &FieldMode {
        &self.modes[id as usize]
    }

    pub fn mode_mut(&mut self, id: ModeId) -> &mut FieldMode {
        &mut self.modes[id as usize]
    }

    pub fn set_rabi(&mut self, id: ModeId, rabi: f64) {
        self.mode_mut(id).rabi = rabi;
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |name, reason: String| Err(ModelError::InvalidParameter { name, reason });
        for (slot, mode) in self.modes.iter().enumerate() {
            if mode.id != ModeId::ALL[slot] {
                return invalid("modes", format!("slot {slot} holds {:?}", mode.id));
            }
            if !(mode.rabi >= 0.0 && mode.rabi.is_finite()) {
                return invalid("rabi", format!("{:?} has rabi {}", mode.id, mode.rabi));
            }
            if !mode.detuning.is_finite() {
                return invalid("detuning", format!("{:?} is not finite", mode.id));
            }
        }
        if !(self.gamma_exc > 0.0 && self.gamma_exc.is_finite()) {
            return invalid("gamma_exc", format!("must be > 0, got {}", self.gamma_exc));
        }
        if !(self.gamma_pop > 0.0 && self.gamma_pop.is_finite()) {
            return invalid("gamma_pop", format!("must be > 0, got {}", self.gamma_pop));
        }
        if !(self.gamma_coh >= 0.0 && self.gamma_coh.is_finite()) {
            return invalid("gamma_coh", format!("must be >= 0, got {}", self.gamma_coh));
        }
        if !self.delta.is_finite() || !self.off_res_detuning.is_finite() {
            return invalid("delta", "detunings must be finite".into());
        }
        let w = self.thermal_weights;
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid("thermal_weights", format!("{w:?} is not a distribution"));
        }
        self.branching.validate()
    }

    /// Field couplings as (ground, excited, Rabi, one-photon detuning) edges.
    ///
    /// Both repump sidebands address the lumped Trap → PiExcited transition;
    /// they are merged into one edge whose squared Rabi frequency is the sum
    /// of the two (incoherent pumping rates add), with an Ω²-weighted detuning.
    pub fn couplings(&self) -> Vec<Coupling> {
        let sa = self.mode(ModeId::SigmaA);
        let sb = self.mode(ModeId::SigmaB);
        let pa = self.mode(ModeId::PiA);
        let pb = self.mode(ModeId::PiB);
        let d = &self.dipole;

        let ra = d.pi_a_trap * pa.rabi;
        let rb = d.pi_b_trap * pb.rabi;
        let trap_rabi = ra.hypot(rb);
        let trap_detuning = if ra == 0.0 && rb == 0.0 {
            0.5 * (pa.detuning + pb.detuning)
        } else {
            (ra * ra * pa.detuning + rb * rb * pb.detuning) / (ra * ra + rb * rb)
        };

        vec![
            Coupling::new(Level::Clock2, Level::CptExcited, sa.rabi, sa.detuning),
            Coupling::new(Level::Clock1, Level::CptExcited, sb.rabi, sb.detuning + self.delta),
            Coupling::new(Level::Trap, Level::PiExcited, trap_rabi, trap_detuning),
            // PiA sits on F'=2, i.e. Δ_off above the F'=1 line it reaches from Clock2
            Coupling::new(
                Level::Clock2,
                Level::OffRes1,
                d.pi_a_off * pa.rabi,
                pa.detuning + self.off_res_detuning,
            ),
            // PiB sits on F'=1, Δ_off below F'=2
            Coupling::new(
                Level::Clock1,
                Level::OffRes2,
                d.pi_b_off * pb.rabi,
                pb.detuning - self.off_res_detuning,
            ),
        ]
    }
}

/// One field-driven transition in the rotating frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub ground: Level,
    pub excited: Level,
    pub rabi: f64,
    /// Laser minus transition frequency.
    pub detuning: f64,
}

impl Coupling {
    pub fn new(ground: Level, excited: Level, rabi: f64, detuning: f64) -> Self {
        Self { ground, excited, rabi, detuning }
    }
}

/// Rotating-frame Hamiltonian (units of ħ = 1, rad/s).
#[derive(Clone, Debug, PartialEq)]
pub struct Hamiltonian(pub LevelMatrix);

impl Hamiltonian {
    pub fn matrix(&self) -> &LevelMatrix {
        &self.0
    }

    pub fn is_hermitian(&self) -> bool {
        let m = &self.0;
        (0..NUM_LEVELS).all(|i| (0..NUM_LEVELS).all(|j| m[(i, j)] == m[(j, i)].conj()))
    }
}

/// Build the RWA Hamiltonian for an arbitrary coupling forest.
///
/// Frame energies propagate along edges from Clock2 (then from Trap for the
/// repump component): an excited level sits at `E_ground − Δ`. A coupling
/// closing a cycle has no consistent frame and is rejected. Inert edges
/// (zero Rabi frequency) are dropped before the frame is built.
pub fn hamiltonian_from_couplings(couplings: &[Coupling]) -> Result<Hamiltonian, ModelError> {
    let couplings: Vec<Coupling> = couplings.iter().copied().filter(|c| c.rabi != 0.0).collect();
    let mut energy: [Option<f64>; NUM_LEVELS] = [None; NUM_LEVELS];
    let mut placed = vec![false; couplings.len()];
    let roots = [Level::Clock2, Level::Trap]
        .into_iter()
        .chain(Level::ALL);

    for root in roots {
        if energy[root.index()].is_some() {
            continue;
        }
        energy[root.index()] = Some(0.0);
        // sweep until no edge attaches to the current component
        loop {
            let mut progressed = false;
            for (k, c) in couplings.iter().enumerate() {
                if placed[k] {
                    continue;
                }
                let (g, e) = (c.ground.index(), c.excited.index());
                match (energy[g], energy[e]) {
                    (Some(_), Some(_)) => return Err(ModelError::CyclicCoupling(c.excited)),
                    (Some(eg), None) => energy[e] = Some(eg - c.detuning),
                    (None, Some(ee)) => energy[g] = Some(ee + c.detuning),
                    (None, None) => continue,
                }
                placed[k] = true;
                progressed = true;
            }
            if !progressed {
                break;
            }
        }
    }

    let mut h = LevelMatrix::zeros();
    for (i, e) in energy.iter().enumerate() {
        h[(i, i)] = Complex64::new(e.unwrap_or(0.0), 0.0);
    }
    for c in &couplings {
        let (g, e) = (c.ground.index(), c.excited.index());
        let half = Complex64::new(0.5 * c.rabi, 0.0);
        h[(g, e)] += half;
        h[(e, g)] = h[(g, e)].conj();
    }
    Ok(Hamiltonian(h))
}

pub fn build_hamiltonian(params: &ModelParams) -> Result<Hamiltonian, ModelError> {
    hamiltonian_from_couplings(&params.couplings())
}

/// Thermal ground distribution, diag(1/8, 1/8, 0, 6/8, 0, 0, 0).
pub fn thermal_state() -> crate::liouvillian::DensityMatrix {
    thermal_state_with(&THERMAL_WEIGHTS)
}

pub fn thermal_state_with(weights: &[f64; 3]) -> crate::liouvillian::DensityMatrix {
    let mut rho = LevelMatrix::zeros();
    for (w, level) in weights.iter().zip(Level::GROUND) {
        rho[(level.index(), level.index())] = Complex64::new(*w, 0.0);
    }
    crate::liouvillian::DensityMatrix(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn all_off() -> ModelParams {
        ModelParams { off_res_detuning: 0.0, ..ModelParams::default() }
    }

    #[test]
    fn levels_partition_into_ground_and_excited() {
        assert_eq!(Level::ALL.len(), 7);
        for l in Level::ALL {
            assert!(l.is_ground() ^ l.is_excited(), "{l}");
        }
    }

    #[test]
    fn zero_fields_give_zero_hamiltonian() {
        let h = build_hamiltonian(&all_off()).unwrap();
        assert_eq!(h.0, LevelMatrix::zeros());
    }

    #[test]
    fn single_sigma_mode_fills_one_pair() {
        let mut p = all_off();
        let omega = TAU * 1.3e6;
        p.set_rabi(ModeId::SigmaB, omega);
        let h = build_hamiltonian(&p).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let expected = if (i, j) == (0, 2) || (i, j) == (2, 0) { omega / 2.0 } else { 0.0 };
                assert_eq!(h.0[(i, j)], Complex64::new(expected, 0.0), "({i},{j})");
            }
        }
    }

    #[test]
    fn two_photon_detuning_shifts_only_clock1() {
        let mut p = ModelParams::default();
        p.set_rabi(ModeId::SigmaA, 1e6);
        p.set_rabi(ModeId::SigmaB, 1e6);
        p.set_rabi(ModeId::PiA, 3e5);
        let base = build_hamiltonian(&p).unwrap().0;
        let shifted = build_hamiltonian(&p.with_delta(TAU * 1000.0)).unwrap().0;
        let diff = shifted - base;
        for i in 0..7 {
            for j in 0..7 {
                let expected = if i == j && i == 0 { TAU * 1000.0 } else { 0.0 };
                assert!((diff[(i, j)].re - expected).abs() < 1e-6, "({i},{j}) {}", diff[(i, j)]);
            }
        }
    }

    #[test]
    fn cyclic_coupling_is_rejected() {
        let cs = [
            Coupling::new(Level::Clock1, Level::CptExcited, 1.0, 0.0),
            Coupling::new(Level::Clock2, Level::CptExcited, 1.0, 0.0),
            Coupling::new(Level::Clock1, Level::OffRes1, 1.0, 0.0),
            Coupling::new(Level::Clock2, Level::OffRes1, 1.0, 0.0),
        ];
        assert!(matches!(
            hamiltonian_from_couplings(&cs),
            Err(ModelError::CyclicCoupling(_))
        ));
    }

    #[test]
    fn default_coupling_graph_is_a_forest() {
        let mut p = ModelParams::default();
        for id in ModeId::ALL {
            p.set_rabi(id, 1e6);
        }
        let h = build_hamiltonian(&p).unwrap();
        assert!(h.is_hermitian());
    }

    #[test]
    fn branching_rows_are_exact_fractions() {
        let b = default_branching_table();
        let expected = [
            [0.25, 0.25, 0.5],
            [1.0 / 9.0, 1.0 / 9.0, 7.0 / 9.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
            [1.0 / 3.0, 0.0, 2.0 / 3.0],
        ];
        for (row, exp) in b.0.iter().zip(expected) {
            for (v, e) in row.iter().zip(exp) {
                assert!((v - e).abs() < 1e-13);
            }
        }
        b.validate().unwrap();
    }

    #[test]
    fn branching_text_round_trip() {
        let b = default_branching_table();
        let parsed = BranchingTable::parse(&b.to_text()).unwrap();
        for (r1, r2) in b.0.iter().zip(parsed.0.iter()) {
            for (x, y) in r1.iter().zip(r2) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn branching_parse_rejects_bad_rows() {
        let bad = "h Clock1 Clock2 Trap\nCptExcited 0.5 0.5\n";
        assert!(BranchingTable::parse(bad).is_err());
        let forbidden = "h Clock1 Clock2 Trap\nCptExcited 0.25 0.25 0.5\nPiExcited 0.1 0.1 0.8\n\
                         OffRes1 0.1 0.3 0.6\nOffRes2 0.3 0 0.7\n";
        assert!(BranchingTable::parse(forbidden).is_err());
    }

    #[test]
    fn thermal_state_populations() {
        let rho = thermal_state();
        let diag: Vec<f64> = (0..7).map(|i| rho.0[(i, i)].re).collect();
        assert_eq!(diag, vec![0.125, 0.125, 0.0, 0.75, 0.0, 0.0, 0.0]);
        assert_eq!(rho.trace(), 1.0);
    }

    #[test]
    fn validate_rejects_nonpositive_rates() {
        let p = ModelParams { gamma_pop: 0.0, ..ModelParams::default() };
        assert!(p.validate().is_err());
        let p = ModelParams { gamma_exc: -1.0, ..ModelParams::default() };
        assert!(p.validate().is_err());
        ModelParams::default().validate().unwrap();
    }
}
