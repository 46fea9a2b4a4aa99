"""Physical constants and fixed conventions. Energies in MHz, fields in Gauss."""

#: Bohr magneton over Planck's constant, MHz per Gauss.
MU_B_MHZ_PER_G = 1.3996245

#: Product basis order: electron m_s (outer) x nuclear m_I (inner).
BASIS_LABELS = (
    (1, 0.5), (1, -0.5),
    (0, 0.5), (0, -0.5),
    (-1, 0.5), (-1, -0.5),
)

#: Excited-state lifetimes of m_s=0 and m_s=+-1, ns.
T0_NS = 12.0
T1_NS = 7.8

#: Default width for sharp ground-state lines, MHz.
GS_FWHM_MHZ = 1.0
