//! Instance catalog: SKU hardware, hourly prices per pricing plan, regions
//! and per-region core quotas.
//!
//! NC-series rates are the March 2019 Linux prices for East US. H16r and the
//! two on-premises node types (`Short`, `Ivygpu`) have no published rate in
//! the same sheet; they carry notional cost-recovery rates so that every SKU
//! can be metered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("unknown SKU `{0}`")]
    UnknownSku(String),
    #[error("unknown region `{0}`")]
    UnknownRegion(String),
    #[error("invalid catalog entry `{sku}`: {reason}")]
    InvalidEntry { sku: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingPlan {
    PayGoDedicated,
    PayGoLowPriority,
    #[serde(rename = "reserved_1_year")]
    Reserved1Year,
    #[serde(rename = "reserved_3_year")]
    Reserved3Year,
}

impl PricingPlan {
    pub const ALL: [PricingPlan; 4] = [
        PricingPlan::PayGoDedicated,
        PricingPlan::PayGoLowPriority,
        PricingPlan::Reserved1Year,
        PricingPlan::Reserved3Year,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PricingPlan::PayGoDedicated => "pay_go_dedicated",
            PricingPlan::PayGoLowPriority => "pay_go_low_priority",
            PricingPlan::Reserved1Year => "reserved_1_year",
            PricingPlan::Reserved3Year => "reserved_3_year",
        }
    }
}

impl fmt::Display for PricingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PricingPlan {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PricingPlan::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown pricing plan `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkuSpec {
    pub name: String,
    pub vcores: u32,
    pub ram_gib: u32,
    pub ssd_gib: u32,
    pub gpu_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpu_model: Option<String>,
    pub rdma_capable: bool,
    pub region_availability: BTreeSet<String>,
}

/// USD per node-hour under each plan; at most 4 fractional digits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSheet {
    #[serde(with = "rust_decimal::serde::str")]
    pub pay_go_dedicated: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub pay_go_low_priority: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub reserved_1_year: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub reserved_3_year: Decimal,
}

impl PriceSheet {
    pub fn rate(&self, plan: PricingPlan) -> Decimal {
        match plan {
            PricingPlan::PayGoDedicated => self.pay_go_dedicated,
            PricingPlan::PayGoLowPriority => self.pay_go_low_priority,
            PricingPlan::Reserved1Year => self.reserved_1_year,
            PricingPlan::Reserved3Year => self.reserved_3_year,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    #[serde(flatten)]
    pub spec: SkuSpec,
    pub prices: PriceSheet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    /// Name of the interconnect model nodes in this region use.
    pub interconnect: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionQuota {
    pub region: String,
    pub dedicated_cores: u32,
    pub low_priority_cores: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotaDefaults {
    pub dedicated_cores: u32,
    pub low_priority_cores: u32,
}

impl Default for QuotaDefaults {
    fn default() -> Self {
        QuotaDefaults {
            dedicated_cores: DEFAULT_DEDICATED_CORES,
            low_priority_cores: DEFAULT_LOW_PRIORITY_CORES,
        }
    }
}

pub const DEFAULT_DEDICATED_CORES: u32 = 24;
pub const DEFAULT_LOW_PRIORITY_CORES: u32 = 24;

pub const AZURE_INTERCONNECT: &str = "azure";
pub const COLONIAL_ONE_INTERCONNECT: &str = "colonial-one";

/// Immutable SKU and region table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    skus: BTreeMap<String, CatalogEntry>,
    regions: BTreeMap<String, RegionSpec>,
    default_quota: QuotaDefaults,
}

/// Overrides merged on top of the built-in catalog. Entries replace
/// built-ins with the same name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogOverrides {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skus: Vec<CatalogEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regions: Vec<RegionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_quota: Option<QuotaDefaults>,
}

const AZURE_REGIONS: [&str; 5] = ["eastus", "northeurope", "southcentralus", "westeurope", "westus2"];
const COLONIAL_ONE_REGION: &str = "colonial-one";

fn dec(s: &str) -> Decimal {
    Decimal::from_str(s).expect("static price literal")
}

#[allow(clippy::too_many_arguments)]
fn entry(
    name: &str,
    vcores: u32,
    ram_gib: u32,
    ssd_gib: u32,
    gpus: (u32, Option<&str>),
    rdma_capable: bool,
    regions: &[&str],
    prices: [&str; 4],
) -> CatalogEntry {
    CatalogEntry {
        spec: SkuSpec {
            name: name.to_string(),
            vcores,
            ram_gib,
            ssd_gib,
            gpu_count: gpus.0,
            gpu_model: gpus.1.map(str::to_string),
            rdma_capable,
            region_availability: regions.iter().map(|r| r.to_string()).collect(),
        },
        prices: PriceSheet {
            pay_go_dedicated: dec(prices[0]),
            pay_go_low_priority: dec(prices[1]),
            reserved_1_year: dec(prices[2]),
            reserved_3_year: dec(prices[3]),
        },
    }
}

impl Catalog {
    /// The built-in catalog.
    pub fn default_catalog() -> Catalog {
        let az = &AZURE_REGIONS[..];
        let c1 = &[COLONIAL_ONE_REGION][..];
        // gpu_count is the device count; a K80 board carries two devices.
        let entries = vec![
            entry("NC6", 6, 56, 340, (1, Some("K80")), false, az, ["0.90", "0.18", "0.5733", "0.3996"]),
            entry("NC12", 12, 112, 680, (2, Some("K80")), false, az, ["1.80", "0.36", "1.1466", "0.7991"]),
            entry("NC24", 24, 224, 1440, (4, Some("K80")), false, az, ["3.60", "0.72", "2.2932", "1.5981"]),
            entry("NC24r", 24, 224, 1440, (4, Some("K80")), true, az, ["3.96", "0.792", "2.5224", "1.7578"]),
            entry("H16r", 16, 112, 2000, (0, None), true, az, ["2.1280", "0.4256", "1.3550", "0.9450"]),
            entry("Short", 16, 120, 93, (0, None), false, c1, ["0.8000", "0.1600", "0.5100", "0.3550"]),
            entry("Ivygpu", 12, 120, 93, (2, Some("K20")), true, c1, ["1.2000", "0.2400", "0.7650", "0.5330"]),
        ];
        let mut regions: BTreeMap<String, RegionSpec> = AZURE_REGIONS
            .iter()
            .map(|r| {
                (r.to_string(), RegionSpec { name: r.to_string(), interconnect: AZURE_INTERCONNECT.into() })
            })
            .collect();
        regions.insert(
            COLONIAL_ONE_REGION.into(),
            RegionSpec { name: COLONIAL_ONE_REGION.into(), interconnect: COLONIAL_ONE_INTERCONNECT.into() },
        );
        Catalog {
            skus: entries.into_iter().map(|e| (e.spec.name.clone(), e)).collect(),
            regions,
            default_quota: QuotaDefaults::default(),
        }
    }

    /// Built-in catalog with `overrides` merged in, validated.
    pub fn with_overrides(overrides: &CatalogOverrides) -> Result<Catalog, CatalogError> {
        let mut cat = Catalog::default_catalog();
        for r in &overrides.regions {
            cat.regions.insert(r.name.clone(), r.clone());
        }
        for e in &overrides.skus {
            cat.skus.insert(e.spec.name.clone(), e.clone());
        }
        if let Some(q) = overrides.default_quota {
            cat.default_quota = q;
        }
        cat.validate()?;
        Ok(cat)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        for e in self.skus.values() {
            let bad = |reason: &str| CatalogError::InvalidEntry {
                sku: e.spec.name.clone(),
                reason: reason.to_string(),
            };
            if e.spec.vcores < 1 {
                return Err(bad("vcores must be at least 1"));
            }
            if e.spec.ram_gib == 0 {
                return Err(bad("ram_gib must be positive"));
            }
            for plan in PricingPlan::ALL {
                let r = e.prices.rate(plan);
                if r <= Decimal::ZERO {
                    return Err(bad(&format!("{plan} rate must be positive")));
                }
                if r.scale() > 4 {
                    return Err(bad(&format!("{plan} rate has more than 4 fractional digits")));
                }
            }
            let p = &e.prices;
            if p.pay_go_low_priority >= p.pay_go_dedicated {
                return Err(bad("low-priority rate must be below the dedicated rate"));
            }
            if !(p.reserved_3_year < p.reserved_1_year && p.reserved_1_year < p.pay_go_dedicated) {
                return Err(bad("reserved rates must satisfy 3-year < 1-year < pay-as-you-go"));
            }
            for region in &e.spec.region_availability {
                if !self.regions.contains_key(region) {
                    return Err(bad(&format!("unknown region `{region}`")));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, sku: &str) -> Result<&SkuSpec, CatalogError> {
        self.entry(sku).map(|e| &e.spec)
    }

    pub fn entry(&self, sku: &str) -> Result<&CatalogEntry, CatalogError> {
        self.skus.get(sku).ok_or_else(|| CatalogError::UnknownSku(sku.to_string()))
    }

    /// Exact catalog rate, USD per node-hour.
    pub fn price_rate(&self, sku: &str, plan: PricingPlan) -> Result<Decimal, CatalogError> {
        Ok(self.entry(sku)?.prices.rate(plan))
    }

    pub fn region(&self, name: &str) -> Result<&RegionSpec, CatalogError> {
        self.regions.get(name).ok_or_else(|| CatalogError::UnknownRegion(name.to_string()))
    }

    pub fn skus(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.skus.values()
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionSpec> {
        self.regions.values()
    }

    pub fn default_quota(&self) -> QuotaDefaults {
        self.default_quota
    }
}

/// Per-region core limits. Changes only through [`QuotaTable::set`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuotaTable {
    defaults: QuotaDefaults,
    overrides: BTreeMap<String, RegionQuota>,
}

impl QuotaTable {
    pub fn new(catalog: &Catalog) -> Self {
        QuotaTable { defaults: catalog.default_quota(), overrides: BTreeMap::new() }
    }

    pub fn get(&self, region: &str) -> RegionQuota {
        self.overrides.get(region).cloned().unwrap_or(RegionQuota {
            region: region.to_string(),
            dedicated_cores: self.defaults.dedicated_cores,
            low_priority_cores: self.defaults.low_priority_cores,
        })
    }

    /// Sets the limits for `region`; `None` keeps the current value.
    pub fn set(
        &mut self,
        catalog: &Catalog,
        region: &str,
        dedicated_cores: Option<u32>,
        low_priority_cores: Option<u32>,
    ) -> Result<RegionQuota, CatalogError> {
        catalog.region(region)?;
        let mut q = self.get(region);
        if let Some(d) = dedicated_cores {
            q.dedicated_cores = d;
        }
        if let Some(l) = low_priority_cores {
            q.low_priority_cores = l;
        }
        self.overrides.insert(region.to_string(), q.clone());
        Ok(q)
    }
}
