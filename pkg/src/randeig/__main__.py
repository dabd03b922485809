from .analysis import main

raise SystemExit(main())
