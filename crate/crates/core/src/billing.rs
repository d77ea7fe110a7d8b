//! Metering and cost reporting by service category.
//!
//! VM time is billed per node from the instant the node is ready (idle in
//! a steady pool) until it is released, pro rata to the millisecond.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::Ratio;
use rust_decimal::Decimal;
use serde::Serialize;

use crate::catalog::{Catalog, CatalogError, PricingPlan};
use crate::fabric::{SimDuration, SimTime, Window, MILLIS_PER_HOUR};
use crate::money::{round_ratio, Usd};
use crate::storage::GIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ServiceCategory {
    Bandwidth,
    DataManagement,
    Networking,
    Storage,
    VirtualMachines,
}

impl ServiceCategory {
    pub const ALL: [ServiceCategory; 5] = [
        ServiceCategory::Bandwidth,
        ServiceCategory::DataManagement,
        ServiceCategory::Networking,
        ServiceCategory::Storage,
        ServiceCategory::VirtualMachines,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ServiceCategory::Bandwidth => "Bandwidth",
            ServiceCategory::DataManagement => "Data Management",
            ServiceCategory::Networking => "Networking",
            ServiceCategory::Storage => "Storage",
            ServiceCategory::VirtualMachines => "Virtual Machines",
        }
    }
}

impl fmt::Display for ServiceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Recorded VM usage, kept so the ledger can be re-priced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmUsage {
    pub sku: String,
    pub plan: PricingPlan,
    pub node_id: String,
    pub duration: SimDuration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineItem {
    pub category: ServiceCategory,
    pub usd: Usd,
    pub description: String,
    pub interval: Option<Window>,
    pub vm: Option<VmUsage>,
}

/// Append-only list of charges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    items: Vec<LineItem>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger holding one undescribed item per `(category, amount)`.
    pub fn from_amounts(items: impl IntoIterator<Item = (ServiceCategory, Usd)>) -> Self {
        let mut l = Ledger::new();
        for (category, usd) in items {
            l.append(LineItem { category, usd, description: String::new(), interval: None, vm: None });
        }
        l
    }

    pub fn append(&mut self, item: LineItem) {
        assert!(item.usd >= Usd::zero(), "ledger amounts are non-negative");
        self.items.push(item);
    }

    pub fn items(&self) -> &[LineItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total(&self) -> Usd {
        self.items.iter().map(|i| i.usd).sum()
    }

    pub fn category_total(&self, category: ServiceCategory) -> Usd {
        self.items.iter().filter(|i| i.category == category).map(|i| i.usd).sum()
    }

    pub fn vm_usage(&self) -> impl Iterator<Item = &VmUsage> {
        self.items.iter().filter_map(|i| i.vm.as_ref())
    }

    /// One line per item: `category  usd  start  end  description`, tab
    /// separated, amounts to 6 places.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("category\tusd\tstart\tend\tdescription\n");
        for i in &self.items {
            let (s, e) = match i.interval {
                Some(w) => (w.start.to_string(), w.end.to_string()),
                None => ("-".into(), "-".into()),
            };
            writeln!(out, "{}\t{:.6}\t{}\t{}\t{}", i.category, i.usd, s, e, i.description).unwrap();
        }
        out
    }
}

/// `rate(sku, plan) * node_time / 1 h`, exact.
pub fn meter_vm(catalog: &Catalog, sku: &str, plan: PricingPlan, node_time: SimDuration) -> Result<Usd, CatalogError> {
    let rate = catalog.price_rate(sku, plan)?;
    Ok(Usd::prorate(rate, node_time.millis() as u128, MILLIS_PER_HOUR as u128))
}

/// VM cost of the recorded usage re-priced under `plan`. The ledger is not
/// modified.
pub fn counterfactual(ledger: &Ledger, catalog: &Catalog, plan: PricingPlan) -> Result<Usd, CatalogError> {
    ledger.vm_usage().map(|u| meter_vm(catalog, &u.sku, plan, u.duration)).sum()
}

/// Unit prices for the non-VM categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BillingRates {
    pub egress_usd_per_gib: Decimal,
    pub ingress_usd_per_gib: Decimal,
    /// Provisioned share quota, per GiB per 30-day month.
    pub storage_usd_per_gib_month: Decimal,
    pub data_ops_usd_per_10k: Decimal,
    /// Charged per node-hour on pools with inter-node communication.
    pub networking_usd_per_node_hour: Decimal,
}

impl Default for BillingRates {
    fn default() -> Self {
        let d = |s| Decimal::from_str(s).unwrap();
        BillingRates {
            egress_usd_per_gib: d("0.087"),
            ingress_usd_per_gib: Decimal::ZERO,
            storage_usd_per_gib_month: d("0.06"),
            data_ops_usd_per_10k: d("0.065"),
            networking_usd_per_node_hour: d("0.005"),
        }
    }
}

pub const MILLIS_PER_MONTH: u64 = 30 * 24 * MILLIS_PER_HOUR;

impl BillingRates {
    pub fn egress(&self, bytes: u64) -> Usd {
        Usd::prorate(self.egress_usd_per_gib, bytes as u128, GIB as u128)
    }

    pub fn ingress(&self, bytes: u64) -> Usd {
        Usd::prorate(self.ingress_usd_per_gib, bytes as u128, GIB as u128)
    }

    pub fn storage(&self, quota_gib: u64, span: SimDuration) -> Usd {
        Usd::prorate(self.storage_usd_per_gib_month, quota_gib as u128 * span.millis() as u128, MILLIS_PER_MONTH as u128)
    }

    pub fn data_ops(&self, ops: u64) -> Usd {
        Usd::prorate(self.data_ops_usd_per_10k, ops as u128, 10_000)
    }

    pub fn networking(&self, node_time: SimDuration) -> Usd {
        Usd::prorate(self.networking_usd_per_node_hour, node_time.millis() as u128, MILLIS_PER_HOUR as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub category: ServiceCategory,
    pub usd: Usd,
    /// Share of the item sum, in percent, unrounded.
    pub percent: Ratio<i128>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub total: Usd,
}

/// Per-category totals and their share of the sum of all items.
pub fn report(ledger: &Ledger) -> Report {
    let total = ledger.total();
    let rows = ServiceCategory::ALL
        .into_iter()
        .map(|category| {
            let usd = ledger.category_total(category);
            ReportRow { category, usd, percent: usd.percent_of(total) }
        })
        .collect();
    Report { rows, total }
}

impl Report {
    pub fn row(&self, category: ServiceCategory) -> &ReportRow {
        self.rows.iter().find(|r| r.category == category).expect("all categories present")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<18} {:>14} {:>12}", "Service", "Cost (USD)", "% of total").unwrap();
        for r in &self.rows {
            let usd = format!("{:.2}", r.usd);
            let pct = round_ratio(r.percent, 3).to_string();
            writeln!(out, "{:<18} {:>14} {:>12}", r.category.label(), usd, pct).unwrap();
        }
        writeln!(out, "{:<18} {:>14}", "Total", format!("{:.2}", self.total)).unwrap();
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("service\tusd\tpercent\n");
        for r in &self.rows {
            writeln!(out, "{}\t{:.4}\t{}", r.category.label(), r.usd, round_ratio(r.percent, 4)).unwrap();
        }
        writeln!(out, "Total\t{:.4}\t100.0000", self.total).unwrap();
        out
    }
}

/// Interval helper for line items.
pub fn span(start: SimTime, end: SimTime) -> Option<Window> {
    Some(Window { start, end })
}
