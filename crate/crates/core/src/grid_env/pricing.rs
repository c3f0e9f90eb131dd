use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One tariff block covering hours `[start_hour, end_hour)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePeriod {
    pub label: String,
    pub start_hour: u32,
    pub end_hour: u32,
    /// Currency per kWh. The same price applies to energy sold back.
    pub price: f64,
}

/// Time-of-use tariff whose periods partition the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PricePeriod>", into = "Vec<PricePeriod>")]
pub struct PricingSchedule {
    periods: Vec<PricePeriod>,
    by_hour: [f64; 24],
}

impl PricingSchedule {
    pub fn new(mut periods: Vec<PricePeriod>) -> Result<Self> {
        periods.sort_by_key(|p| p.start_hour);
        let mut by_hour = [f64::NAN; 24];
        for p in &periods {
            if !(p.price > 0.0 && p.price.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "price of period '{}' must be strictly positive, got {}",
                    p.label, p.price
                )));
            }
            if p.start_hour >= p.end_hour || p.end_hour > 24 {
                return Err(Error::InvalidConfig(format!(
                    "period '{}' has an invalid hour range [{}, {})",
                    p.label, p.start_hour, p.end_hour
                )));
            }
            for h in p.start_hour..p.end_hour {
                if !by_hour[h as usize].is_nan() {
                    return Err(Error::InvalidConfig(format!(
                        "hour {h} is covered by more than one period"
                    )));
                }
                by_hour[h as usize] = p.price;
            }
        }
        if let Some(h) = by_hour.iter().position(|p| p.is_nan()) {
            return Err(Error::InvalidConfig(format!(
                "hour {h} is not covered by any period"
            )));
        }
        Ok(Self { periods, by_hour })
    }

    /// Three-period residential tariff (CNY/kWh): valley overnight, peak in
    /// late morning and afternoon, normal otherwise.
    pub fn three_period() -> Self {
        let period = |label: &str, start_hour, end_hour, price| PricePeriod {
            label: label.to_string(),
            start_hour,
            end_hour,
            price,
        };
        const PEAK: f64 = 1.1121;
        const NORMAL: f64 = 0.6542;
        const VALLEY: f64 = 0.2486;
        Self::new(vec![
            period("valley", 0, 8, VALLEY),
            period("normal", 8, 10, NORMAL),
            period("peak", 10, 12, PEAK),
            period("normal", 12, 14, NORMAL),
            period("peak", 14, 19, PEAK),
            period("normal", 19, 24, NORMAL),
        ])
        .expect("built-in tariff is valid")
    }

    /// Price of the period containing hour `t mod 24`.
    pub fn price_at(&self, t: usize) -> f64 {
        self.by_hour[t % 24]
    }

    pub fn periods(&self) -> &[PricePeriod] {
        &self.periods
    }

    pub fn max_price(&self) -> f64 {
        self.by_hour.iter().copied().fold(0.0, f64::max)
    }
}

impl Default for PricingSchedule {
    fn default() -> Self {
        Self::three_period()
    }
}

impl TryFrom<Vec<PricePeriod>> for PricingSchedule {
    type Error = Error;
    fn try_from(periods: Vec<PricePeriod>) -> Result<Self> {
        Self::new(periods)
    }
}

impl From<PricingSchedule> for Vec<PricePeriod> {
    fn from(s: PricingSchedule) -> Self {
        s.periods
    }
}
