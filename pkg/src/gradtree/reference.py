"""Published root-split statistics for the fixed 20-passenger Titanic table.

Each entry: (label, feature index, threshold, Gini gain, information gain).
Feature 0 is the Fare category code (Low=0, High=1), feature 1 is Age.
"""

ROOT_SPLITS = [
    ("Fare Category", 0, 0.5, 0.000, 0.001),
    ("Age >= 8.0", 1, 8.0, 0.013, 0.032),
    ("Age >= 10.5", 1, 10.5, 0.005, 0.008),
    ("Age >= 12.0", 1, 12.0, 0.035, 0.053),
    ("Age >= 18.5", 1, 18.5, 0.080, 0.123),
    ("Age >= 24.5", 1, 24.5, 0.042, 0.064),
    ("Age >= 25.5", 1, 25.5, 0.019, 0.030),
    ("Age >= 27.5", 1, 27.5, 0.007, 0.010),
    ("Age >= 30.5", 1, 30.5, 0.001, 0.001),
    ("Age >= 38.5", 1, 38.5, 0.000, 0.001),
    ("Age >= 45.0", 1, 45.0, 0.000, 0.001),
    ("Age >= 45.5", 1, 45.5, 0.000, 0.001),
    ("Age >= 50.5", 1, 50.5, 0.013, 0.022),
    ("Age >= 56.0", 1, 56.0, 0.046, 0.080),
    ("Age >= 59.0", 1, 59.0, 0.029, 0.049),
    ("Age >= 64.5", 1, 64.5, 0.015, 0.025),
    ("Age >= 68.5", 1, 68.5, 0.005, 0.008),
    ("Age >= 71.5", 1, 71.5, 0.000, 0.000),
    ("Age >= 77.0", 1, 77.0, 0.005, 0.008),
    ("Age >= 81.5", 1, 81.5, 0.044, 0.079),
]

ROOT_ENTROPY = 0.934
CART_TRAIN_ACCURACY = 0.85
