import pandas as pd
from typing import Dict, List, Optional, Union

ReferenceRows = Dict[str, pd.DataFrame]


def reference_rows(architecture_name: Optional[str] = None) -> Union[List[str], pd.DataFrame]:
    """
    Published per-minibatch times of the ff modules only, for dense and Dyad layers, measured on GPU.
    They document the expected ordering of the variants. Their absolute values are never compared
    with measurements: they depend on the hardware, and this library times on CPU.
    Columns: variant, n_dyad, ff_ms (mean time per minibatch spent in the ff modules), speedup
    (dense ff_ms / variant ff_ms).
    :param architecture_name: Name of the architecture preset, None for the list of names
    :return: A DataFrame of reference rows
    """
    rows_data: ReferenceRows = {
        "OPT-125m": pd.DataFrame(
            [
                ["dense", 1, 4.302],
                ["dyad-it", 4, 3.902],
                ["dyad-it", 8, 2.609],
                ["dyad-it-cat", 4, 3.27],
            ],
            columns=["variant", "n_dyad", "ff_ms"],
        ),
        "OPT-350m": pd.DataFrame(
            [
                ["dense", 1, 7.520],
                ["dyad-it", 4, 5.492],
                ["dyad-it", 8, 4.138],
                ["dyad-it-cat", 4, 5.46],
            ],
            columns=["variant", "n_dyad", "ff_ms"],
        ),
    }
    for rows in rows_data.values():
        rows["speedup"] = rows.loc[rows["variant"] == "dense", "ff_ms"].iloc[0] / rows["ff_ms"]

    if architecture_name is None:
        return list(rows_data.keys())
    try:
        return rows_data[architecture_name]
    except KeyError:
        raise KeyError(
            "No reference rows for '" + str(architecture_name) + "', the available architectures are: "
            + ", ".join(rows_data.keys())
        ) from None
