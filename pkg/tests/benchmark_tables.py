"""Published BraTS2018 dice numbers used to check report arithmetic.

Each entry is (wt, tc, ec, avg) exactly as printed. ``IMP`` holds the printed
improvement column for the P* anchor.
"""

UNIMODAL = {
    "T1": (72.96, 65.59, 37.77, 58.77),
    "T2": (82.65, 66.76, 45.23, 64.91),
    "T1ce": (71.41, 73.30, 76.36, 73.69),
    "Flair": (81.91, 63.57, 40.74, 62.07),
}

# (modality, backbone) -> {setting: (wt, tc, ec, avg)}
ROWS = {
    ("T1", "KD-Net"): {
        "original": (79.62, 59.83, 33.69, 57.72),
        "none": (72.07, 66.22, 40.13, 59.47),
        "standard_normal": (74.21, 67.63, 43.24, 61.69),
        "fixed_modality": (74.06, 64.21, 41.78, 60.02),
        "adaptive": (71.49, 65.18, 43.25, 59.97),
    },
    ("T1", "PMKL"): {
        "original": (73.31, 64.26, 41.37, 58.98),
        "none": (75.50, 65.98, 40.09, 60.53),
        "standard_normal": (75.60, 65.59, 43.31, 61.50),
        "fixed_modality": (75.06, 66.80, 41.43, 61.10),
        "adaptive": (72.04, 68.39, 47.66, 62.70),
    },
    ("T1", "ProtoKD"): {
        "original": (74.46, 67.34, 47.41, 63.07),
        "none": (73.64, 65.05, 43.04, 60.57),
        "standard_normal": (72.95, 65.52, 42.92, 60.47),
        "fixed_modality": (75.60, 66.95, 43.18, 61.91),
        "adaptive": (73.98, 67.36, 42.11, 61.15),
    },
    ("T1", "SMU-Net"): {
        "original": (74.33, 65.52, 40.22, 60.02),
        "none": (75.24, 68.52, 43.03, 62.26),
        "standard_normal": (75.10, 66.41, 42.78, 61.43),
        "fixed_modality": (75.15, 67.25, 41.71, 61.37),
        "adaptive": (75.02, 67.78, 43.30, 62.03),
    },
    ("T2", "KD-Net"): {
        "original": (85.74, 66.79, 33.63, 62.05),
        "none": (80.50, 66.99, 48.02, 65.17),
        "standard_normal": (83.23, 69.64, 43.18, 65.35),
        "fixed_modality": (83.22, 70.72, 44.72, 66.22),
        "adaptive": (84.26, 71.30, 47.04, 67.53),
    },
    ("T2", "PMKL"): {
        "original": (81.00, 67.92, 47.09, 65.34),
        "none": (82.68, 67.14, 44.82, 64.88),
        "standard_normal": (80.46, 69.06, 48.38, 65.97),
        "fixed_modality": (82.47, 69.56, 45.78, 65.94),
        "adaptive": (83.77, 69.91, 45.17, 66.28),
    },
    ("T2", "ProtoKD"): {
        "original": (81.83, 68.29, 47.35, 65.82),
        "none": (81.82, 70.21, 48.78, 66.94),
        "standard_normal": (83.82, 69.54, 45.03, 66.13),
        "fixed_modality": (83.18, 67.96, 47.71, 66.28),
        "adaptive": (83.01, 70.26, 47.29, 66.85),
    },
    ("T2", "SMU-Net"): {
        "original": (85.57, 70.61, 47.33, 67.84),
        "none": (84.69, 70.34, 46.94, 67.32),
        "standard_normal": (84.88, 69.96, 45.08, 66.64),
        "fixed_modality": (85.09, 69.50, 44.85, 66.48),
        "adaptive": (84.45, 69.82, 47.09, 67.12),
    },
    ("T1ce", "KD-Net"): {
        "original": (78.87, 80.83, 70.52, 76.74),
        "none": (72.14, 80.75, 77.61, 76.83),
        "standard_normal": (72.49, 79.30, 74.46, 75.42),
        "fixed_modality": (76.73, 81.64, 75.56, 77.98),
        "adaptive": (76.62, 80.15, 81.29, 79.36),
    },
    ("T1ce", "PMKL"): {
        "original": (70.50, 76.92, 75.54, 74.32),
        "none": (74.00, 78.64, 72.71, 77.31),
        "standard_normal": (73.89, 80.86, 77.48, 77.41),
        "fixed_modality": (77.46, 80.71, 75.40, 77.86),
        "adaptive": (75.97, 80.35, 76.44, 77.58),
    },
    ("T1ce", "ProtoKD"): {
        "original": (74.67, 81.48, 76.01, 77.39),
        "none": (75.16, 80.47, 76.74, 77.45),
        "standard_normal": (76.52, 80.85, 75.73, 77.70),
        "fixed_modality": (75.98, 79.41, 76.99, 77.46),
        "adaptive": (74.91, 81.44, 77.39, 77.91),
    },
    ("T1ce", "SMU-Net"): {
        "original": (75.33, 79.41, 76.22, 76.99),
        "none": (76.65, 80.08, 76.01, 77.58),
        "standard_normal": (75.68, 79.86, 74.92, 76.06),
        "fixed_modality": (78.63, 74.85, 76.51, 76.66),
        "adaptive": (75.83, 80.13, 75.57, 77.18),
    },
    ("Flair", "KD-Net"): {
        "original": (88.28, 64.37, 33.39, 62.01),
        "none": (84.97, 63.16, 41.44, 63.19),
        "standard_normal": (84.84, 64.67, 44.15, 64.56),
        "fixed_modality": (85.46, 66.77, 43.99, 65.41),
        "adaptive": (84.96, 66.58, 42.16, 64.57),
    },
    ("Flair", "PMKL"): {
        "original": (84.11, 62.21, 41.35, 62.56),
        "none": (84.74, 67.07, 43.42, 65.07),
        "standard_normal": (84.09, 66.78, 42.13, 64.33),
        "fixed_modality": (83.84, 68.89, 41.41, 64.71),
        "adaptive": (85.70, 68.44, 43.57, 65.90),
    },
    ("Flair", "ProtoKD"): {
        "original": (84.64, 65.56, 42.30, 64.17),
        "none": (84.59, 67.70, 40.91, 64.39),
        "standard_normal": (84.62, 64.32, 37.76, 62.23),
        "fixed_modality": (84.23, 67.73, 41.45, 64.47),
        "adaptive": (85.62, 68.71, 41.38, 65.23),
    },
    ("Flair", "SMU-Net"): {
        "original": (85.74, 62.89, 38.12, 62.25),
        "none": (85.70, 63.50, 39.43, 62.88),
        "standard_normal": (85.99, 65.74, 40.55, 64.09),
        "fixed_modality": (86.78, 63.83, 40.82, 63.81),
        "adaptive": (86.89, 64.88, 41.41, 64.39),
    },
}

IMP = {
    ("T1", "KD-Net"): 2.25,
    ("T1", "PMKL"): 3.97,
    ("T1", "ProtoKD"): -2.55,
    ("T1", "SMU-Net"): 2.01,
    ("T2", "KD-Net"): 5.48,
    ("T2", "PMKL"): 0.94,
    ("T2", "ProtoKD"): 1.03,
    ("T2", "SMU-Net"): -0.62,
    ("T1ce", "KD-Net"): 2.62,
    ("T1ce", "PMKL"): 3.26,
    ("T1ce", "ProtoKD"): 0.52,
    ("T1ce", "SMU-Net"): 0.09,
    ("Flair", "KD-Net"): 2.56,
    ("Flair", "PMKL"): 3.34,
    ("Flair", "ProtoKD"): 1.06,
    ("Flair", "SMU-Net"): 2.14,
}

AVERAGE_IMP = 1.75
