"""How strong would an unobserved confounder have to be?

Robustness values follow from the exposure t-statistic and the residual
degrees of freedom: RV_sign is the partial R^2 with both exposure and
outcome that would drive the estimate to zero, RV_alpha the one that would
make it insignificant at the 5% level. They are compared with the partial
R^2 of observed covariates.

Run: python3 demos/05_sensitivity.py
"""

from quadmatch.pipeline import run_analysis
from quadmatch.sensitivity import df_from_rv_sign, robustness_values
from quadmatch.synthetic import SyntheticConfig, generate_synthetic

# a published row: t = -3.239 with RV_sign 9.4% pins the residual df near 1076
df = df_from_rv_sign(-3.239, 0.094)
rv_sign, rv_alpha = robustness_values(-3.239, round(df))
print(f"df by inversion {df:.1f}; at df {round(df)}: RV_sign {rv_sign:.1%}, RV_alpha {rv_alpha:.1%}")

data = generate_synthetic(SyntheticConfig(seed=5))
rep = run_analysis(data.individuals, data.clusters).sensitivity
print(f"{'dataset':>8}{'estimate':>10}{'t':>8}{'RV_sign':>9}{'RV_alpha':>10}")
for k, r in enumerate(rep.rows[:5], start=1):
    print(f"{k:>8}{r.estimate:>10.2f}{r.t_value:>8.2f}{r.rv_sign:>9.1%}{r.rv_alpha:>10.1%}")
a = rep.average
print(f"{'average':>8}{a.estimate:>10.2f}{a.t_value:>8.2f}{a.rv_sign:>9.1%}{a.rv_alpha:>10.1%}")
for name, r2 in rep.benchmarks.items():
    print(f"benchmark {name}: partial R^2 {r2:.2%}")
print(f"robust to all benchmarks: {rep.robust_to_benchmarks}")
