def get_atomic_numbers():
    """
    Get atomic numbers of the chemical elements supported in datasets.
    Returns a dictionary mapping element symbol to atomic number.
    """
    symbols = [
        "H", "He",
        "Li", "Be", "B", "C", "N", "O", "F", "Ne",
        "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
        "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
        "Ga", "Ge", "As", "Se", "Br", "Kr",
        "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
        "In", "Sn", "Sb", "Te", "I", "Xe",
        "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy",
        "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt",
        "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    ]
    return {symbol: number for number, symbol in enumerate(symbols, start=1)}


def get_isolated_atom_energies():
    """
    Get example reference energies (eV) of isolated atoms for synthetic datasets.
    Returns a dictionary mapping element symbol to energy.
    """
    # hydrogen is the exact nonrelativistic value, the others are round test values
    return {
        "H": -13.6057,
        "C": -1029.0,
        "N": -1485.0,
        "O": -2041.0,
    }
