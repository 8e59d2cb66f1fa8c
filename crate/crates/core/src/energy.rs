//! Per-node energy budgets and debit ledgers.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebitCause {
    RadioTx,
    RadioRx,
    ComputeBusy,
    ComputeIdle,
}

impl DebitCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            DebitCause::RadioTx => "radio_tx",
            DebitCause::RadioRx => "radio_rx",
            DebitCause::ComputeBusy => "compute_busy",
            DebitCause::ComputeIdle => "compute_idle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "radio_tx" => Some(DebitCause::RadioTx),
            "radio_rx" => Some(DebitCause::RadioRx),
            "compute_busy" => Some(DebitCause::ComputeBusy),
            "compute_idle" => Some(DebitCause::ComputeIdle),
            _ => None,
        }
    }
}

impl fmt::Display for DebitCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDebit {
    pub at: f64,
    pub amount_j: f64,
    pub cause: DebitCause,
}

/// Energy budget with an append-only debit ledger. The conservation
/// identity `remaining = initial - sum(debits)` holds to within 1e-9 J at
/// every point in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEnergy {
    pub initial_j: f64,
    pub remaining_j: f64,
    pub debits: Vec<EnergyDebit>,
}

impl NodeEnergy {
    pub fn new(initial_j: f64) -> Self {
        assert!(initial_j >= 0.0);
        Self {
            initial_j,
            remaining_j: initial_j,
            debits: Vec::new(),
        }
    }

    /// Debits only if the full amount is covered by the remaining budget.
    /// Returns false (and records nothing) otherwise; callers use this for
    /// nodes that fall silent on depletion.
    pub fn try_debit(&mut self, at: f64, amount_j: f64, cause: DebitCause) -> bool {
        assert!(amount_j >= 0.0, "debits are nonnegative");
        if amount_j > self.remaining_j {
            return false;
        }
        self.remaining_j -= amount_j;
        self.debits.push(EnergyDebit {
            at,
            amount_j,
            cause,
        });
        true
    }

    /// Unconditional debit for mains-assisted hardware (validator machines),
    /// where the initial budget is a metering baseline rather than a hard
    /// cutoff.
    pub fn debit(&mut self, at: f64, amount_j: f64, cause: DebitCause) {
        assert!(amount_j >= 0.0, "debits are nonnegative");
        self.remaining_j -= amount_j;
        self.debits.push(EnergyDebit {
            at,
            amount_j,
            cause,
        });
    }

    pub fn spent_j(&self) -> f64 {
        self.debits.iter().map(|d| d.amount_j).sum()
    }

    /// Absolute error of the conservation identity.
    pub fn conservation_error_j(&self) -> f64 {
        (self.initial_j - self.spent_j() - self.remaining_j).abs()
    }
}
